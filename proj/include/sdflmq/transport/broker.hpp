#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "sdflmq/bytes.hpp"
#include "sdflmq/transport/topic.hpp"

namespace sdflmq::transport {

using SubscriptionId = std::uint64_t;

// Invoked for every delivered message. Calls for one subscription are serialized
// and ordered by publish order; calls for different subscriptions may be concurrent.
using MessageHandler = std::function<void(const Topic& topic, const Bytes& payload)>;

// Pub/sub contract shared by the in-memory reference broker and adapters for real
// MQTT v3.1.1 brokers. An adapter maps connect(host, port, client_id) plus these
// three operations 1:1 onto the protocol; payloads are opaque byte sequences.
// Delivery guarantee required from adapters is at-least-once; duplicate suppression
// happens above this interface (fleet layer, by message id).
class Broker {
public:
    virtual ~Broker() = default;

    // Returns the number of local subscriptions the message matched
    // (adapters for remote brokers return 0: remote fan-out is not observable).
    virtual std::size_t publish(const Topic& topic, BytesView payload) = 0;

    // Duplicate (endpoint_id, filter) pairs collapse onto one subscription:
    // the existing id is returned and the handler replaced.
    virtual SubscriptionId subscribe(const std::string& endpoint_id, const TopicFilter& filter,
                                     MessageHandler handler) = 0;

    // Idempotent. After it returns, the handler is never invoked again.
    virtual bool unsubscribe(SubscriptionId id) = 0;
};

} // namespace sdflmq::transport
