#include "sdflmq/fleet/reassembly.hpp"

#include "sdflmq/errors.hpp"

namespace sdflmq::fleet {

ReassemblyBuffer::ReassemblyBuffer(const Clock& clock, std::chrono::milliseconds timeout)
    : clock_(clock), timeout_(timeout) {}

std::optional<Bytes> ReassemblyBuffer::add(const Envelope& e) {
    std::lock_guard lock(mutex_);
    auto [it, inserted] = entries_.try_emplace(e.message_id);
    Entry& entry = it->second;
    if (inserted) {
        entry.sender_id = e.sender_id;
        entry.expected = e.batch_count;
        entry.flags = e.flags;
        entry.first_seen = clock_.now();
    } else if (entry.expected != e.batch_count || entry.flags != e.flags) {
        entries_.erase(it);
        throw IntegrityError("conflicting batch metadata for message " + e.message_id.to_hex());
    }

    auto existing = entry.chunks.find(e.batch_index);
    if (existing != entry.chunks.end()) {
        if (existing->second == e.body) {
            return std::nullopt; // duplicate retransmission, ignore
        }
        entries_.erase(it);
        throw IntegrityError("conflicting duplicate chunk " + std::to_string(e.batch_index) +
                             " for message " + e.message_id.to_hex());
    }
    entry.chunks.emplace(e.batch_index, e.body);

    if (entry.chunks.size() < entry.expected) {
        return std::nullopt;
    }

    Bytes payload;
    std::size_t total = 0;
    for (const auto& [index, chunk] : entry.chunks) {
        total += chunk.size();
    }
    payload.reserve(total);
    for (const auto& [index, chunk] : entry.chunks) {
        payload.insert(payload.end(), chunk.begin(), chunk.end());
    }
    const std::uint32_t flags = entry.flags;
    entries_.erase(it);

    if (flags & kFlagCompressed) {
        return decompress_payload(payload);
    }
    return payload;
}

std::vector<DropNotice> ReassemblyBuffer::poll(TimePoint now) {
    std::lock_guard lock(mutex_);
    std::vector<DropNotice> dropped;
    for (auto it = entries_.begin(); it != entries_.end();) {
        if (now - it->second.first_seen > timeout_) {
            dropped.push_back({it->first, it->second.sender_id,
                               static_cast<std::uint32_t>(it->second.chunks.size()),
                               it->second.expected});
            it = entries_.erase(it);
        } else {
            ++it;
        }
    }
    return dropped;
}

std::size_t ReassemblyBuffer::pending_count() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

} // namespace sdflmq::fleet
