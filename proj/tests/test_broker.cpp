#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>
#include <vector>

#include "sdflmq/errors.hpp"
#include "sdflmq/transport/inmemory_broker.hpp"

using namespace sdflmq;
using namespace sdflmq::transport;

TEST_SUITE("transport/broker") {

TEST_CASE("publish delivers to every matching subscriber and reports the count") {
    InMemoryBroker broker;
    std::atomic<int> hits{0};
    broker.subscribe("e1", TopicFilter("a/b"), [&](const Topic&, const Bytes&) { ++hits; });
    broker.subscribe("e2", TopicFilter("a/+"), [&](const Topic&, const Bytes&) { ++hits; });
    broker.subscribe("e3", TopicFilter("a/#"), [&](const Topic&, const Bytes&) { ++hits; });
    broker.subscribe("e4", TopicFilter("other"), [&](const Topic&, const Bytes&) { ++hits; });

    CHECK(broker.publish(Topic("a/b"), to_bytes("x")) == 3);
    CHECK(hits == 3);
    CHECK(broker.publish(Topic("nobody/home"), to_bytes("x")) == 0);
}

TEST_CASE("duplicate (endpoint, filter) pairs collapse to one subscription") {
    InMemoryBroker broker;
    std::atomic<int> hits{0};
    auto id1 = broker.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++hits; });
    auto id2 = broker.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++hits; });
    CHECK(id1 == id2);
    CHECK(broker.publish(Topic("t"), to_bytes("x")) == 1);
    CHECK(hits == 1);

    // A different endpoint with the same filter is a distinct subscription.
    broker.subscribe("e2", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++hits; });
    CHECK(broker.publish(Topic("t"), to_bytes("x")) == 2);
}

TEST_CASE("unsubscribe is idempotent and stops deliveries") {
    InMemoryBroker broker;
    std::atomic<int> a{0};
    std::atomic<int> b{0};
    auto id_a = broker.subscribe("e1", TopicFilter("t/a"), [&](const Topic&, const Bytes&) { ++a; });
    broker.subscribe("e1", TopicFilter("t/b"), [&](const Topic&, const Bytes&) { ++b; });

    CHECK(broker.unsubscribe(id_a));
    CHECK_FALSE(broker.unsubscribe(id_a));
    broker.publish(Topic("t/a"), to_bytes("x"));
    broker.publish(Topic("t/b"), to_bytes("x"));
    CHECK(a == 0);
    CHECK(b == 1); // the other filter still delivers
}

TEST_CASE("per-subscription ordering follows publish order") {
    InMemoryBroker broker;
    std::vector<int> seen;
    broker.subscribe("e1", TopicFilter("seq"), [&](const Topic&, const Bytes& payload) {
        seen.push_back(payload[0]);
    });
    for (int i = 0; i < 50; ++i) {
        Bytes payload{static_cast<std::uint8_t>(i)};
        broker.publish(Topic("seq"), payload);
    }
    REQUIRE(seen.size() == 50);
    for (int i = 0; i < 50; ++i) {
        CHECK(seen[i] == i);
    }
}

TEST_CASE("no message is lost under concurrent publishers") {
    InMemoryBroker broker;
    std::atomic<int> hits{0};
    broker.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++hits; });
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 250; ++i) {
                broker.publish(Topic("t"), to_bytes("x"));
            }
        });
    }
    for (auto& thread : threads) {
        thread.join();
    }
    CHECK(hits == 1000);
}

TEST_CASE("a handler may publish re-entrantly without deadlock") {
    InMemoryBroker broker;
    std::atomic<int> forwarded{0};
    broker.subscribe("e1", TopicFilter("in"), [&](const Topic&, const Bytes& payload) {
        broker.publish(Topic("out"), payload);
    });
    broker.subscribe("e2", TopicFilter("out"), [&](const Topic&, const Bytes&) { ++forwarded; });
    broker.publish(Topic("in"), to_bytes("x"));
    CHECK(forwarded == 1);
}

TEST_CASE("shutdown turns publishes into transport errors") {
    InMemoryBroker broker;
    broker.shutdown();
    CHECK_THROWS_AS(broker.publish(Topic("t"), to_bytes("x")), TransportError);
}

TEST_CASE("bridge forwards matching publishes exactly once") {
    InMemoryBroker a({.broker_id = "A"});
    InMemoryBroker b({.broker_id = "B"});
    bridge_link(a, b, {TopicFilter("sdflmq/#")});

    std::atomic<int> on_b{0};
    b.subscribe("e1", TopicFilter("sdflmq/x"), [&](const Topic&, const Bytes&) { ++on_b; });

    a.publish(Topic("sdflmq/x"), to_bytes("x"));
    CHECK(on_b == 1);

    // Non-matching topics stay local.
    std::atomic<int> other{0};
    b.subscribe("e1", TopicFilter("private/#"), [&](const Topic&, const Bytes&) { ++other; });
    a.publish(Topic("private/x"), to_bytes("x"));
    CHECK(other == 0);
}

TEST_CASE("bridges are bidirectional and duplicates are rejected") {
    InMemoryBroker a({.broker_id = "A"});
    InMemoryBroker b({.broker_id = "B"});
    bridge_link(a, b, {TopicFilter("#")});
    CHECK_THROWS_AS(bridge_link(a, b, {TopicFilter("t")}), ValidationError);
    CHECK_THROWS_AS(bridge_link(b, a, {TopicFilter("t")}), ValidationError);
    CHECK_THROWS_AS(bridge_link(a, a, {TopicFilter("t")}), ValidationError);

    std::atomic<int> on_a{0};
    a.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++on_a; });
    b.publish(Topic("t"), to_bytes("x"));
    CHECK(on_a == 1);
}

TEST_CASE("a three-broker line delivers exactly one copy at the far end") {
    InMemoryBroker a({.broker_id = "A"});
    InMemoryBroker b({.broker_id = "B"});
    InMemoryBroker c({.broker_id = "C"});
    bridge_link(a, b, {TopicFilter("#")});
    bridge_link(b, c, {TopicFilter("#")});

    std::atomic<int> on_b{0};
    std::atomic<int> on_c{0};
    b.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++on_b; });
    c.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++on_c; });

    CHECK(a.publish(Topic("t"), to_bytes("x")) == 0); // only local deliveries count
    CHECK(on_b == 1);
    CHECK(on_c == 1);
}

TEST_CASE("a bridge cycle still delivers at most once per subscription") {
    InMemoryBroker a({.broker_id = "A"});
    InMemoryBroker b({.broker_id = "B"});
    InMemoryBroker c({.broker_id = "C"});
    bridge_link(a, b, {TopicFilter("#")});
    bridge_link(b, c, {TopicFilter("#")});
    bridge_link(c, a, {TopicFilter("#")});

    std::atomic<int> on_a{0};
    std::atomic<int> on_b{0};
    std::atomic<int> on_c{0};
    a.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++on_a; });
    b.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++on_b; });
    c.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++on_c; });

    a.publish(Topic("t"), to_bytes("x"));
    CHECK(on_a == 1);
    CHECK(on_b == 1);
    CHECK(on_c == 1);
}

TEST_CASE("latency model spaces deliveries on one subscription") {
    BrokerOptions options;
    options.latency = LatencyModel{std::chrono::microseconds(5000), std::chrono::nanoseconds(0)};
    InMemoryBroker broker(options);
    std::atomic<int> hits{0};
    broker.subscribe("e1", TopicFilter("t"), [&](const Topic&, const Bytes&) { ++hits; });

    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < 4; ++i) {
        broker.publish(Topic("t"), to_bytes("x"));
    }
    const auto elapsed = std::chrono::steady_clock::now() - start;
    CHECK(hits == 4);
    CHECK(elapsed >= std::chrono::milliseconds(20));
}

TEST_CASE("subscription table is inspectable per endpoint") {
    InMemoryBroker broker;
    broker.subscribe("e1", TopicFilter("a/#"), [](const Topic&, const Bytes&) {});
    broker.subscribe("e1", TopicFilter("b"), [](const Topic&, const Bytes&) {});
    broker.subscribe("e2", TopicFilter("c"), [](const Topic&, const Bytes&) {});
    CHECK(broker.filters_for("e1") == std::vector<std::string>{"a/#", "b"});
    CHECK(broker.subscription_count() == 3);
}

} // TEST_SUITE
