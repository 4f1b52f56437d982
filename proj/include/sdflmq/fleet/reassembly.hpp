#pragma once

#include <chrono>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sdflmq/bytes.hpp"
#include "sdflmq/clock.hpp"
#include "sdflmq/fleet/envelope.hpp"

namespace sdflmq::fleet {

struct DropNotice {
    MessageId message_id;
    std::string sender_id;
    std::uint32_t received = 0;
    std::uint32_t expected = 0;
};

// Collects batches per message_id and releases the logical payload exactly when
// the last missing index arrives, independent of arrival order. Entries whose
// first chunk is older than the timeout are evicted by poll().
class ReassemblyBuffer {
public:
    explicit ReassemblyBuffer(const Clock& clock,
                              std::chrono::milliseconds timeout = std::chrono::seconds(60));

    // Returns the complete payload (decompressed if flagged) when e completes it.
    // Duplicate identical chunks are ignored; a conflicting duplicate or a
    // batch_count mismatch throws IntegrityError and poisons the entry.
    std::optional<Bytes> add(const Envelope& e);

    std::vector<DropNotice> poll(TimePoint now);

    std::size_t pending_count() const;

private:
    struct Entry {
        std::string sender_id;
        std::uint32_t expected = 0;
        std::uint32_t flags = 0;
        std::map<std::uint32_t, Bytes> chunks;
        TimePoint first_seen;
    };

    const Clock& clock_;
    std::chrono::milliseconds timeout_;
    mutable std::mutex mutex_;
    std::map<MessageId, Entry> entries_;
};

} // namespace sdflmq::fleet
