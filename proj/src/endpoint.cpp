#include "sdflmq/fleet/endpoint.hpp"

#include <memory>

#include "sdflmq/errors.hpp"

namespace sdflmq::fleet {

void TransferMeter::record(std::size_t bytes) {
    std::lock_guard lock(mutex_);
    TimePoint now = clock_.now();
    samples_.emplace_back(now, bytes);
    while (!samples_.empty() && now - samples_.front().first > kWindow) {
        samples_.pop_front();
    }
}

double TransferMeter::rate() const {
    std::lock_guard lock(mutex_);
    if (samples_.empty()) {
        return 0.0;
    }
    TimePoint now = clock_.now();
    std::size_t total = 0;
    TimePoint oldest = now;
    for (const auto& [when, bytes] : samples_) {
        if (now - when <= kWindow) {
            total += bytes;
            oldest = std::min(oldest, when);
        }
    }
    auto elapsed = std::chrono::duration<double>(now - oldest).count();
    if (elapsed <= 0.0) {
        elapsed = 1e-3; // burst within one clock tick
    }
    return static_cast<double>(total) / elapsed;
}

Endpoint::Endpoint(transport::Broker& broker, std::string endpoint_id, std::string base_topic,
                   EndpointOptions options, const Clock& clock)
    : broker_(broker),
      endpoint_id_(std::move(endpoint_id)),
      base_topic_(std::move(base_topic)),
      options_(options),
      reassembly_(clock, options.reassembly_timeout),
      meter_(clock) {}

Endpoint::~Endpoint() {
    std::map<std::string, transport::SubscriptionId> bindings;
    {
        std::lock_guard lock(mutex_);
        bindings = std::move(bindings_);
    }
    for (const auto& [filter, id] : bindings) {
        broker_.unsubscribe(id);
    }
}

void Endpoint::bind_function(const std::string& name, FunctionHandler handler) {
    bind_function_at(base_topic_, name, std::move(handler));
}

void Endpoint::bind_function_at(const std::string& base_filter, const std::string& name,
                                FunctionHandler handler) {
    if (name.empty()) {
        throw ValidationError("function name must be non-empty");
    }
    const std::string filter = base_filter + "/" + name;
    {
        std::lock_guard lock(mutex_);
        if (bindings_.contains(filter)) {
            throw BindingError("function already bound: " + filter);
        }
        bindings_.emplace(filter, 0);
    }
    auto shared_handler = std::make_shared<FunctionHandler>(std::move(handler));
    auto id = broker_.subscribe(
        endpoint_id_, transport::TopicFilter(filter),
        [this, shared_handler](const transport::Topic&, const Bytes& payload) {
            on_message(*shared_handler, payload);
        });
    bool unbound_meanwhile = false;
    {
        std::lock_guard lock(mutex_);
        auto it = bindings_.find(filter);
        if (it != bindings_.end()) {
            it->second = id;
        } else {
            unbound_meanwhile = true;
        }
    }
    if (unbound_meanwhile) {
        broker_.unsubscribe(id);
    }
}

bool Endpoint::unbind_function(const std::string& name) {
    return unbind_function_at(base_topic_, name);
}

bool Endpoint::unbind_function_at(const std::string& base_filter, const std::string& name) {
    const std::string filter = base_filter + "/" + name;
    transport::SubscriptionId id = 0;
    {
        std::lock_guard lock(mutex_);
        auto it = bindings_.find(filter);
        if (it == bindings_.end()) {
            return false;
        }
        id = it->second;
        bindings_.erase(it);
    }
    broker_.unsubscribe(id);
    return true;
}

MessageId Endpoint::call_remote(const std::string& target_base_topic, const std::string& name,
                                BytesView args) {
    if (args.size() > options_.max_payload) {
        throw SizeError("payload of " + std::to_string(args.size()) +
                        " bytes exceeds the maximum of " + std::to_string(options_.max_payload));
    }
    auto batches = split_batches(endpoint_id_, name, args, options_.split);
    const transport::Topic topic(target_base_topic + "/" + name);
    MessageId id = batches.front().message_id;
    for (const auto& batch : batches) {
        Bytes wire = encode_envelope(batch);
        meter_.record(wire.size());
        broker_.publish(topic, wire);
    }
    return id;
}

bool Endpoint::is_duplicate(const std::string& sender, const MessageId& id) {
    std::lock_guard lock(mutex_);
    auto& window = dedup_[sender];
    if (window.seen.contains(id)) {
        return true;
    }
    window.seen.insert(id);
    window.order.push_back(id);
    if (window.order.size() > options_.dedup_window) {
        window.seen.erase(window.order.front());
        window.order.pop_front();
    }
    return false;
}

void Endpoint::on_message(const FunctionHandler& handler, const Bytes& payload) {
    std::optional<Bytes> complete;
    std::string sender;
    MessageId id;
    try {
        Envelope e = decode_envelope(payload);
        meter_.record(payload.size());
        sender = e.sender_id;
        id = e.message_id;
        {
            // Completed ids are checked before reassembly so a late duplicate of
            // a finished message cannot seed a ghost partial entry.
            std::lock_guard lock(mutex_);
            auto it = dedup_.find(sender);
            if (it != dedup_.end() && it->second.seen.contains(id)) {
                return;
            }
        }
        complete = reassembly_.add(e);
    } catch (const Error& err) {
        // Malformed or conflicting traffic is dropped, never propagated into
        // the transport dispatch.
        std::lock_guard lock(mutex_);
        ++drop_count_;
        last_drop_reason_ = err.what();
        return;
    }
    if (!complete.has_value()) {
        return;
    }
    if (is_duplicate(sender, id)) {
        return;
    }
    try {
        handler(sender, *complete);
    } catch (const Error& err) {
        // A handler rejecting its argument is an RFC-layer drop, not a
        // transport failure to surface at the publisher.
        std::lock_guard lock(mutex_);
        ++drop_count_;
        last_drop_reason_ = err.what();
    }
}

std::size_t Endpoint::drop_count() const {
    std::lock_guard lock(mutex_);
    return drop_count_;
}

std::string Endpoint::last_drop_reason() const {
    std::lock_guard lock(mutex_);
    return last_drop_reason_;
}

std::vector<DropNotice> Endpoint::poll(TimePoint now) {
    return reassembly_.poll(now);
}

} // namespace sdflmq::fleet
