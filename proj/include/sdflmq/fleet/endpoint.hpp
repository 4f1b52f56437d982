#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "sdflmq/bytes.hpp"
#include "sdflmq/clock.hpp"
#include "sdflmq/fleet/envelope.hpp"
#include "sdflmq/fleet/reassembly.hpp"
#include "sdflmq/transport/broker.hpp"

namespace sdflmq::fleet {

// Handler for one remotely callable function: (caller id, argument bytes).
// Fires exactly once per logical message even when the transport duplicates
// envelopes (at-least-once delivery).
using FunctionHandler = std::function<void(const std::string& sender_id, const Bytes& args)>;

struct EndpointOptions {
    SplitOptions split;
    std::size_t max_payload = 256ull * 1024 * 1024;
    std::chrono::milliseconds reassembly_timeout = std::chrono::seconds(60);
    std::size_t dedup_window = 4096;
};

// Tracks recent transfer volume so bandwidth can be reported in client stats.
class TransferMeter {
public:
    explicit TransferMeter(const Clock& clock) : clock_(clock) {}

    void record(std::size_t bytes);
    // Bytes per second over the trailing window (default 10 s); 0 when idle.
    double rate() const;

private:
    const Clock& clock_;
    mutable std::mutex mutex_;
    std::deque<std::pair<TimePoint, std::size_t>> samples_;
    static constexpr std::chrono::seconds kWindow{10};
};

// RFC endpoint: binds named functions to "<base>/<name>" topics and calls
// remote functions by publishing batched envelopes to the target's base topic.
class Endpoint {
public:
    Endpoint(transport::Broker& broker, std::string endpoint_id, std::string base_topic,
             EndpointOptions options = {}, const Clock& clock = SteadyClock::instance());
    ~Endpoint();

    Endpoint(const Endpoint&) = delete;
    Endpoint& operator=(const Endpoint&) = delete;

    // Binds under this endpoint's own base topic. Duplicate name -> BindingError.
    void bind_function(const std::string& name, FunctionHandler handler);
    // Binds under an arbitrary base (session topics, or a '+' filter for fan-in).
    void bind_function_at(const std::string& base_filter, const std::string& name,
                          FunctionHandler handler);
    // Idempotent; returns false when no such binding existed.
    bool unbind_function(const std::string& name);
    bool unbind_function_at(const std::string& base_filter, const std::string& name);

    MessageId call_remote(const std::string& target_base_topic, const std::string& name,
                          BytesView args);

    // Evicts stale partial messages; returns one notice per dropped message.
    std::vector<DropNotice> poll(TimePoint now);

    const std::string& endpoint_id() const { return endpoint_id_; }
    const std::string& base_topic() const { return base_topic_; }
    const TransferMeter& meter() const { return meter_; }

    // Malformed or conflicting inbound traffic is dropped; these expose it.
    std::size_t drop_count() const;
    std::string last_drop_reason() const;

private:
    void on_message(const FunctionHandler& handler, const Bytes& payload);
    bool is_duplicate(const std::string& sender, const MessageId& id);

    transport::Broker& broker_;
    std::string endpoint_id_;
    std::string base_topic_;
    EndpointOptions options_;
    ReassemblyBuffer reassembly_;
    TransferMeter meter_;
    std::size_t drop_count_ = 0;
    std::string last_drop_reason_;

    mutable std::mutex mutex_;
    std::map<std::string, transport::SubscriptionId> bindings_; // full filter -> subscription
    struct SenderWindow {
        std::set<MessageId> seen;
        std::deque<MessageId> order;
    };
    std::map<std::string, SenderWindow> dedup_;
};

} // namespace sdflmq::fleet
