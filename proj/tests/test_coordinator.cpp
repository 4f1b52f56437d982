#include <doctest.h>

#include <atomic>

#include "sdflmq/coordinator/coordinator.hpp"
#include "sdflmq/errors.hpp"
#include "sdflmq/transport/inmemory_broker.hpp"

using namespace sdflmq;
using namespace sdflmq::coord;
using namespace sdflmq::transport;

namespace {

protocol::CreateSessionRequest create_request(const std::string& owner, const std::string& sid,
                                              std::uint32_t cap_min, std::uint32_t cap_max,
                                              std::uint32_t rounds) {
    protocol::CreateSessionRequest request;
    request.client_id = owner;
    request.session_id = sid;
    request.model_name = "mlp";
    request.session_time_ms = 3'600'000;
    request.waiting_time_ms = 120'000;
    request.capacity_min = cap_min;
    request.capacity_max = cap_max;
    request.fl_rounds = rounds;
    request.preferred_role = "trainer_aggregator";
    return request;
}

protocol::JoinSessionRequest join_request(const std::string& client, const std::string& sid) {
    protocol::JoinSessionRequest request;
    request.client_id = client;
    request.session_id = sid;
    request.model_name = "mlp";
    request.fl_rounds = 3;
    request.preferred_role = "trainer_aggregator";
    return request;
}

protocol::ReadinessMsg ready_msg(const std::string& client, const std::string& sid,
                                 std::uint32_t round, std::vector<std::string> missing = {}) {
    ClientStats stats;
    stats.client_id = client;
    stats.free_memory = 1024;
    protocol::ReadinessMsg msg;
    msg.client_id = client;
    msg.session_id = sid;
    msg.round = round;
    msg.stats_json = stats_to_json(stats);
    msg.missing = std::move(missing);
    return msg;
}

struct Fixture {
    ManualClock clock;
    InMemoryBroker broker;
    CoordinatorOptions options;
    std::unique_ptr<Coordinator> coordinator;
    std::atomic<int> assignments{0};
    std::atomic<int> round_starts{0};

    explicit Fixture(CoordinatorOptions opts = {}) {
        options = std::move(opts);
        options.log = [](const std::string&) {};
        coordinator = std::make_unique<Coordinator>(broker, options, clock);
        broker.subscribe("probe", TopicFilter("sdflmq/client/+/assign_role"),
                         [this](const Topic&, const Bytes&) { ++assignments; });
        broker.subscribe("probe2", TopicFilter("sdflmq/session/+/round_start"),
                         [this](const Topic&, const Bytes&) { ++round_starts; });
    }

    void fill_session(const std::string& sid, std::size_t n, std::uint32_t rounds) {
        auto response = coordinator->handle_create(
            create_request("m00", sid, static_cast<std::uint32_t>(n),
                           static_cast<std::uint32_t>(n), rounds));
        REQUIRE(response.accepted);
        for (std::size_t i = 1; i < n; ++i) {
            std::string id = "m" + std::string(i < 10 ? "0" : "") + std::to_string(i);
            REQUIRE(coordinator->handle_join(join_request(id, sid)).accepted);
        }
    }

    void everyone_ready(const std::string& sid, std::uint32_t round) {
        auto info = coordinator->session_info(sid);
        REQUIRE(info.has_value());
        for (const auto& member : info->members) {
            coordinator->record_readiness(ready_msg(member, sid, round));
        }
    }
};

} // namespace

TEST_SUITE("coordinator/sessions") {

TEST_CASE("create accepts a fresh id and rejects a live duplicate") {
    Fixture fx;
    auto first = fx.coordinator->handle_create(create_request("c1", "s1", 2, 4, 3));
    CHECK(first.accepted);
    CHECK(first.state == "WAITING");

    // Second create with the same id: first request wins, this one is dumped.
    auto second = fx.coordinator->handle_create(create_request("c2", "s1", 2, 4, 3));
    CHECK_FALSE(second.accepted);
    CHECK(second.reason == "session id already live");

    auto info = fx.coordinator->session_info("s1");
    REQUIRE(info.has_value());
    CHECK(info->owner == "c1");
    CHECK(info->members == std::vector<std::string>{"c1"});
}

TEST_CASE("create validates capacities and durations") {
    Fixture fx;
    auto bad_caps = create_request("c1", "s1", 5, 3, 2);
    CHECK_FALSE(fx.coordinator->handle_create(bad_caps).accepted);

    auto bad_rounds = create_request("c1", "s2", 1, 3, 0);
    CHECK_FALSE(fx.coordinator->handle_create(bad_rounds).accepted);
}

TEST_CASE("joins fill the session and trigger clustering at capacity") {
    Fixture fx;
    fx.fill_session("s1", 5, 3);

    auto info = fx.coordinator->session_info("s1");
    REQUIRE(info.has_value());
    CHECK(info->state == SessionState::kActive);
    CHECK(info->members.size() == 5);
    CHECK(fx.assignments == 5); // one private message per member
    CHECK(fx.round_starts == 1);

    auto topology = fx.coordinator->session_topology("s1");
    REQUIRE(topology.has_value());
    CHECK_NOTHROW(topology->validate());

    // Late joiner bounces off the full session.
    auto late = fx.coordinator->handle_join(join_request("late", "s1"));
    CHECK_FALSE(late.accepted);
    CHECK(late.reason == "session full");
}

TEST_CASE("join rejections carry reasons") {
    Fixture fx;
    CHECK(fx.coordinator->handle_join(join_request("c9", "nope")).reason == "unknown session");

    fx.coordinator->handle_create(create_request("c1", "s1", 2, 8, 3));
    auto mismatch = join_request("c2", "s1");
    mismatch.model_name = "other_model";
    CHECK(fx.coordinator->handle_join(mismatch).reason == "model mismatch");
}

TEST_CASE("waiting sessions cluster at expiry when quorum is met") {
    Fixture fx;
    fx.coordinator->handle_create(create_request("c1", "s1", 2, 10, 3));
    fx.coordinator->handle_join(join_request("c2", "s1"));
    fx.coordinator->handle_join(join_request("c3", "s1"));

    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kWaiting);
    fx.clock.advance(std::chrono::milliseconds(119'999));
    fx.coordinator->tick();
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kWaiting);

    fx.clock.advance(std::chrono::milliseconds(2));
    auto events = fx.coordinator->tick();
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kActive);
    REQUIRE(!events.empty());
    CHECK(events[0].kind == SessionEventKind::kClustered);
}

TEST_CASE("waiting sessions abort at expiry below quorum") {
    Fixture fx;
    fx.coordinator->handle_create(create_request("c1", "s1", 5, 10, 3));
    fx.coordinator->handle_join(join_request("c2", "s1"));
    fx.coordinator->handle_join(join_request("c3", "s1")); // 3 < capacity_min 5

    fx.clock.advance(std::chrono::minutes(3));
    auto events = fx.coordinator->tick();
    REQUIRE(events.size() == 1);
    CHECK(events[0].kind == SessionEventKind::kAborted);
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kAborted);

    // Terminal states are sticky.
    fx.clock.advance(std::chrono::hours(5));
    fx.coordinator->tick();
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kAborted);
}

TEST_CASE("round counter reaching fl_rounds terminates the session") {
    Fixture fx;
    fx.fill_session("s1", 3, 2);

    fx.everyone_ready("s1", 1);
    auto events = fx.coordinator->tick();
    REQUIRE(events.size() == 2);
    CHECK(events[0].kind == SessionEventKind::kRoundCompleted);
    CHECK(events[1].kind == SessionEventKind::kRoundStarted);
    CHECK(fx.coordinator->session_info("s1")->rounds_completed == 1);

    fx.everyone_ready("s1", 2);
    events = fx.coordinator->tick();
    REQUIRE(events.size() == 2);
    CHECK(events[0].kind == SessionEventKind::kRoundCompleted);
    CHECK(events[1].kind == SessionEventKind::kTerminated);
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kTerminated);
}

TEST_CASE("session_time expiry terminates an active session") {
    Fixture fx;
    fx.fill_session("s1", 3, 50);
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kActive);

    fx.clock.advance(std::chrono::hours(2));
    auto events = fx.coordinator->tick();
    REQUIRE(events.size() == 1);
    CHECK(events[0].kind == SessionEventKind::kTerminated);
}

TEST_CASE("the state machine never skips states") {
    Fixture fx;
    fx.fill_session("s1", 2, 1);
    fx.everyone_ready("s1", 1);
    fx.coordinator->tick();

    const auto info = fx.coordinator->session_info("s1");
    REQUIRE(info.has_value());
    const std::vector<SessionState> expected{SessionState::kCreated, SessionState::kWaiting,
                                             SessionState::kClustering, SessionState::kActive,
                                             SessionState::kTerminated};
    CHECK(info->state_history == expected);
}

TEST_CASE("a terminated id can be recreated") {
    Fixture fx;
    fx.fill_session("s1", 2, 1);
    fx.everyone_ready("s1", 1);
    fx.coordinator->tick();
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kTerminated);

    CHECK(fx.coordinator->handle_create(create_request("c9", "s1", 1, 2, 1)).accepted);
}

TEST_CASE("readiness bookkeeping is idempotent and scoped to live rounds") {
    Fixture fx;
    fx.fill_session("s1", 3, 3);

    CHECK_FALSE(fx.coordinator->record_readiness(ready_msg("m00", "s1", 1)));
    CHECK_FALSE(fx.coordinator->record_readiness(ready_msg("m00", "s1", 1))); // duplicate
    CHECK_FALSE(fx.coordinator->record_readiness(ready_msg("m01", "s1", 1)));
    CHECK(fx.coordinator->record_readiness(ready_msg("m02", "s1", 1))); // completes

    // Unknown member and stale round are ignored.
    CHECK_FALSE(fx.coordinator->record_readiness(ready_msg("ghost", "s1", 1)));
    CHECK_FALSE(fx.coordinator->record_readiness(ready_msg("m00", "s1", 9)));

    // Reports to a terminated session are ignored.
    fx.coordinator->tick();
    fx.everyone_ready("s1", 2);
    fx.coordinator->tick();
    fx.everyone_ready("s1", 3);
    fx.coordinator->tick();
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kTerminated);
    CHECK_FALSE(fx.coordinator->record_readiness(ready_msg("m00", "s1", 3)));
}

TEST_CASE("static optimizer sends zero rearrangement traffic between rounds") {
    Fixture fx;
    fx.fill_session("s1", 4, 3);
    const int after_clustering = fx.assignments;

    fx.everyone_ready("s1", 1);
    fx.coordinator->tick();
    CHECK(fx.assignments == after_clustering); // old == new, nobody is told

    auto topology = fx.coordinator->session_topology("s1");
    REQUIRE(topology.has_value());
    CHECK_NOTHROW(topology->validate());
}

TEST_CASE("round-robin optimizer messages exactly the changed clients") {
    CoordinatorOptions options;
    options.optimizer = "round-robin";
    options.clustering = ClusteringPolicy::single();
    Fixture fx(std::move(options));
    fx.fill_session("s1", 4, 3);
    const int after_clustering = fx.assignments;

    const auto before = *fx.coordinator->session_topology("s1");
    fx.everyone_ready("s1", 1);
    fx.coordinator->tick();
    const auto after = *fx.coordinator->session_topology("s1");

    const auto delta = compute_role_delta(before, after);
    CHECK(!delta.empty());
    CHECK(fx.assignments - after_clustering == static_cast<int>(delta.size()));
}

TEST_CASE("stragglers draw force-aggregate orders and strikes demote") {
    CoordinatorOptions options;
    options.straggler_timeout = std::chrono::seconds(30);
    Fixture fx(std::move(options));

    std::atomic<int> force_orders{0};
    fx.broker.subscribe("probe3", TopicFilter("sdflmq/client/+/force_aggregate"),
                        [&](const Topic&, const Bytes&) { ++force_orders; });

    fx.fill_session("s1", 4, 5);
    // m01..m03 report, m00 (a head) stalls.
    fx.coordinator->record_readiness(ready_msg("m01", "s1", 1));
    fx.coordinator->record_readiness(ready_msg("m02", "s1", 1));
    fx.coordinator->record_readiness(ready_msg("m03", "s1", 1));

    fx.clock.advance(std::chrono::seconds(31));
    fx.coordinator->tick();
    CHECK(force_orders == 1); // exactly the stalled head

    // The straggler recovers; the round completes and its strike count resets.
    fx.coordinator->record_readiness(ready_msg("m00", "s1", 1));
    auto events = fx.coordinator->tick();
    REQUIRE(events.size() >= 2);
    CHECK(events[0].kind == SessionEventKind::kRoundCompleted);

    // Round 2: m00 goes dark. The suspect flag lets the round complete anyway.
    fx.coordinator->record_readiness(ready_msg("m01", "s1", 2));
    fx.coordinator->record_readiness(ready_msg("m02", "s1", 2));
    fx.coordinator->record_readiness(ready_msg("m03", "s1", 2));
    fx.clock.advance(std::chrono::seconds(31));
    fx.coordinator->tick(); // strike 1 (fresh after the reset)
    auto round2_events = fx.coordinator->tick();
    REQUIRE(!round2_events.empty());
    CHECK(round2_events[0].kind == SessionEventKind::kRoundCompleted);
    CHECK(fx.coordinator->session_info("s1")->members.size() == 4);

    // Round 3: dark again. The second consecutive flag demotes.
    fx.coordinator->record_readiness(ready_msg("m01", "s1", 3));
    fx.coordinator->record_readiness(ready_msg("m02", "s1", 3));
    fx.coordinator->record_readiness(ready_msg("m03", "s1", 3));
    fx.clock.advance(std::chrono::seconds(31));
    auto strike_events = fx.coordinator->tick();
    bool demoted = false;
    for (const auto& event : strike_events) {
        demoted |= event.kind == SessionEventKind::kMemberDemoted && event.detail == "m00";
    }
    CHECK(demoted);
    CHECK(fx.coordinator->session_info("s1")->members.size() == 3);
}

TEST_CASE("deregistered members leave the session") {
    Fixture fx;
    fx.coordinator->handle_create(create_request("c1", "s1", 2, 10, 3));
    fx.coordinator->handle_join(join_request("c2", "s1"));
    fx.coordinator->handle_deregister({"c2", "s1", "shutting down"});
    CHECK(fx.coordinator->session_info("s1")->members == std::vector<std::string>{"c1"});
}

TEST_CASE("shutdown terminates every live session") {
    Fixture fx;
    fx.coordinator->handle_create(create_request("c1", "s1", 2, 10, 3));
    fx.fill_session("s2", 3, 4);
    fx.coordinator->shutdown_sessions();
    CHECK(fx.coordinator->session_info("s1")->state == SessionState::kTerminated);
    CHECK(fx.coordinator->session_info("s2")->state == SessionState::kTerminated);
}

} // TEST_SUITE
