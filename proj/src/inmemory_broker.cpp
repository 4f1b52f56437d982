#include "sdflmq/transport/inmemory_broker.hpp"

#include <algorithm>
#include <random>
#include <thread>

#include "sdflmq/errors.hpp"

namespace sdflmq::transport {

namespace {

constexpr std::size_t kSeenPublishCap = 8192;

std::uint64_t random_salt() {
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

} // namespace

InMemoryBroker::InMemoryBroker(BrokerOptions options)
    : options_(std::move(options)), publish_salt_(random_salt()) {}

InMemoryBroker::~InMemoryBroker() {
    shutdown();
    // Detach from bridge peers. Own lock is released before taking any peer lock,
    // so two brokers tearing down concurrently cannot deadlock.
    std::vector<BridgeLink> links;
    {
        std::lock_guard lock(mutex_);
        links = std::move(bridges_);
        bridges_.clear();
    }
    for (auto& link : links) {
        InMemoryBroker* peer = link.peer;
        if (peer == nullptr) {
            continue;
        }
        std::lock_guard lock(peer->mutex_);
        std::erase_if(peer->bridges_, [this](const BridgeLink& l) { return l.peer == this; });
    }
}

void InMemoryBroker::shutdown() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    for (auto& [id, sub] : subscriptions_) {
        sub->queue.clear();
        sub->removed = true;
    }
}

std::size_t InMemoryBroker::publish(const Topic& topic, BytesView payload) {
    std::uint64_t publish_id;
    {
        std::lock_guard lock(mutex_);
        publish_id = publish_salt_ ^ ++publish_counter_;
    }
    return deliver(topic, payload, publish_id, {});
}

bool InMemoryBroker::already_seen(std::uint64_t publish_id) {
    if (seen_publishes_.contains(publish_id)) {
        return true;
    }
    seen_publishes_.insert(publish_id);
    seen_order_.push_back(publish_id);
    if (seen_order_.size() > kSeenPublishCap) {
        seen_publishes_.erase(seen_order_.front());
        seen_order_.pop_front();
    }
    return false;
}

std::size_t InMemoryBroker::deliver(const Topic& topic, BytesView payload,
                                    std::uint64_t publish_id, std::set<std::string> visited) {
    auto shared_payload = std::make_shared<const Bytes>(payload.begin(), payload.end());
    std::vector<std::shared_ptr<Subscription>> matched;
    std::vector<BridgeLink> forwards;
    {
        std::lock_guard lock(mutex_);
        if (closed_) {
            throw TransportError("broker '" + options_.broker_id + "' is shut down");
        }
        if (already_seen(publish_id)) {
            return 0;
        }
        for (auto& [id, sub] : subscriptions_) {
            if (topic_matches(TopicFilter(sub->filter_path), topic)) {
                sub->queue.emplace_back(topic, shared_payload);
                matched.push_back(sub);
            }
        }
        visited.insert(options_.broker_id);
        for (const auto& link : bridges_) {
            if (link.peer == nullptr || visited.contains(link.peer->broker_id())) {
                continue;
            }
            bool match = std::any_of(
                link.filter_paths.begin(), link.filter_paths.end(),
                [&](const std::string& f) { return topic_matches(TopicFilter(f), topic); });
            if (match) {
                forwards.push_back(link);
            }
        }
    }

    for (auto& sub : matched) {
        drain(sub);
    }
    for (auto& link : forwards) {
        link.peer->deliver(topic, payload, publish_id, visited);
    }
    return matched.size();
}

void InMemoryBroker::drain(const std::shared_ptr<Subscription>& sub) {
    std::unique_lock lock(mutex_);
    if (sub->dispatching.has_value() || sub->removed) {
        return; // another thread owns the queue and will pick up new messages
    }
    sub->dispatching = std::this_thread::get_id();
    while (!sub->queue.empty() && !sub->removed) {
        auto [topic, payload] = std::move(sub->queue.front());
        sub->queue.pop_front();
        MessageHandler handler = sub->handler;
        lock.unlock();
        if (options_.latency.has_value()) {
            std::this_thread::sleep_for(options_.latency->cost(payload->size()));
        }
        handler(topic, *payload);
        lock.lock();
    }
    sub->dispatching.reset();
    sub->idle.notify_all();
}

SubscriptionId InMemoryBroker::subscribe(const std::string& endpoint_id, const TopicFilter& filter,
                                         MessageHandler handler) {
    std::lock_guard lock(mutex_);
    if (closed_) {
        throw TransportError("broker '" + options_.broker_id + "' is shut down");
    }
    for (auto& [id, sub] : subscriptions_) {
        if (sub->endpoint_id == endpoint_id && sub->filter_path == filter.str()) {
            sub->handler = std::move(handler);
            return id;
        }
    }
    auto sub = std::make_shared<Subscription>();
    sub->id = next_subscription_id_++;
    sub->endpoint_id = endpoint_id;
    sub->filter_path = filter.str();
    sub->handler = std::move(handler);
    subscriptions_.emplace(sub->id, sub);
    return sub->id;
}

bool InMemoryBroker::unsubscribe(SubscriptionId id) {
    std::unique_lock lock(mutex_);
    auto it = subscriptions_.find(id);
    if (it == subscriptions_.end()) {
        return false;
    }
    auto sub = it->second;
    sub->removed = true;
    sub->queue.clear();
    subscriptions_.erase(it);
    // Block until an in-flight handler finishes, unless we are that handler.
    if (sub->dispatching.has_value() && *sub->dispatching != std::this_thread::get_id()) {
        sub->idle.wait(lock, [&] { return !sub->dispatching.has_value(); });
    }
    return true;
}

std::size_t InMemoryBroker::subscription_count() const {
    std::lock_guard lock(mutex_);
    return subscriptions_.size();
}

std::vector<std::string> InMemoryBroker::filters_for(const std::string& endpoint_id) const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> filters;
    for (const auto& [id, sub] : subscriptions_) {
        if (sub->endpoint_id == endpoint_id) {
            filters.push_back(sub->filter_path);
        }
    }
    std::sort(filters.begin(), filters.end());
    return filters;
}

BridgeId bridge_link(InMemoryBroker& a, InMemoryBroker& b,
                     const std::vector<TopicFilter>& filters) {
    if (&a == &b) {
        throw ValidationError("cannot bridge a broker to itself");
    }
    static std::atomic<BridgeId> next_id{1};

    std::vector<std::string> paths;
    paths.reserve(filters.size());
    for (const auto& f : filters) {
        paths.push_back(f.str());
    }

    std::scoped_lock lock(a.mutex_, b.mutex_);
    bool exists = std::any_of(a.bridges_.begin(), a.bridges_.end(),
                              [&](const auto& l) { return l.peer == &b; });
    if (exists) {
        throw ValidationError("bridge between '" + a.broker_id() + "' and '" + b.broker_id() +
                              "' already exists");
    }
    BridgeId id = next_id++;
    a.bridges_.push_back({id, &b, paths});
    b.bridges_.push_back({id, &a, paths});
    return id;
}

} // namespace sdflmq::transport
