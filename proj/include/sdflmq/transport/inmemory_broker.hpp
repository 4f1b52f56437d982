#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "sdflmq/transport/broker.hpp"

namespace sdflmq::transport {

// Deterministic per-delivery cost model: delivering one message to one
// subscription occupies that subscription for fixed + size * per_byte.
struct LatencyModel {
    std::chrono::microseconds per_message{0};
    std::chrono::nanoseconds per_byte{0};

    std::chrono::nanoseconds cost(std::size_t payload_size) const {
        return std::chrono::duration_cast<std::chrono::nanoseconds>(per_message) +
               per_byte * static_cast<std::int64_t>(payload_size);
    }
};

struct BrokerOptions {
    std::string broker_id = "broker";
    std::optional<LatencyModel> latency;
};

using BridgeId = std::uint64_t;

// In-memory reference broker. Matching is synchronous; handlers run on the
// publishing thread, serialized per subscription via a dispatch-ownership queue,
// so per-subscription order equals publish order while distinct subscriptions
// may be served concurrently from distinct publisher threads.
class InMemoryBroker final : public Broker {
public:
    explicit InMemoryBroker(BrokerOptions options = {});
    ~InMemoryBroker() override;

    InMemoryBroker(const InMemoryBroker&) = delete;
    InMemoryBroker& operator=(const InMemoryBroker&) = delete;

    std::size_t publish(const Topic& topic, BytesView payload) override;
    SubscriptionId subscribe(const std::string& endpoint_id, const TopicFilter& filter,
                             MessageHandler handler) override;
    bool unsubscribe(SubscriptionId id) override;

    const std::string& broker_id() const { return options_.broker_id; }

    // Subsequent publishes throw TransportError. Pending queues are dropped.
    void shutdown();

    // Introspection used by tests and by the client's subscription-set invariant.
    std::size_t subscription_count() const;
    std::vector<std::string> filters_for(const std::string& endpoint_id) const;

    friend BridgeId bridge_link(InMemoryBroker& a, InMemoryBroker& b,
                                const std::vector<TopicFilter>& filters);

private:
    struct Subscription {
        SubscriptionId id = 0;
        std::string endpoint_id;
        std::string filter_path;
        MessageHandler handler;
        std::deque<std::pair<Topic, std::shared_ptr<const Bytes>>> queue;
        bool removed = false;
        std::optional<std::thread::id> dispatching;
        std::condition_variable idle;
    };

    struct BridgeLink {
        BridgeId id = 0;
        InMemoryBroker* peer = nullptr;
        std::vector<std::string> filter_paths;
    };

    std::size_t deliver(const Topic& topic, BytesView payload, std::uint64_t publish_id,
                        std::set<std::string> visited);
    void drain(const std::shared_ptr<Subscription>& sub);
    bool already_seen(std::uint64_t publish_id);

    BrokerOptions options_;
    mutable std::mutex mutex_;
    bool closed_ = false;
    SubscriptionId next_subscription_id_ = 1;
    std::map<SubscriptionId, std::shared_ptr<Subscription>> subscriptions_;
    std::vector<BridgeLink> bridges_;

    // Dedup of bridged publishes so cyclic bridge graphs cannot double-deliver.
    std::unordered_set<std::uint64_t> seen_publishes_;
    std::deque<std::uint64_t> seen_order_;

    std::uint64_t publish_salt_;
    std::uint64_t publish_counter_ = 0;
};

// Links two brokers so publishes matching any filter are forwarded once to the
// other side. A duplicate link between the same pair is rejected.
BridgeId bridge_link(InMemoryBroker& a, InMemoryBroker& b,
                     const std::vector<TopicFilter>& filters);

} // namespace sdflmq::transport
