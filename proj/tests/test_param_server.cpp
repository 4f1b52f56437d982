#include <doctest.h>

#include <atomic>
#include <cstdio>
#include <filesystem>

#include "sdflmq/errors.hpp"
#include "sdflmq/fleet/endpoint.hpp"
#include "sdflmq/paramserver/param_server.hpp"
#include "sdflmq/transport/inmemory_broker.hpp"

using namespace sdflmq;
using namespace sdflmq::transport;
using namespace sdflmq::pserver;

namespace {

model::ModelParameters params_of(float fill) {
    return model::ModelParameters{{model::Tensor{"w", {4}, std::vector<float>(4, fill)}}};
}

void push_global(fleet::Endpoint& root, const std::string& sid, std::uint32_t round, float fill,
                 double weight = 1.0) {
    protocol::ModelUpdateFrame frame;
    frame.session_id = sid;
    frame.round = round;
    frame.sender_id = root.endpoint_id();
    frame.weight = weight;
    frame.params = params_of(fill);
    root.call_remote(protocol::global_base(sid), protocol::kFnGlobalModel,
                     protocol::encode_model_update(frame));
}

struct Fixture {
    InMemoryBroker broker;
    ParamServerOptions options;
    std::unique_ptr<ParamServer> server;
    fleet::Endpoint root{broker, "root", "sdflmq/client/root"};
    std::atomic<int> rebroadcasts{0};

    explicit Fixture(ParamServerOptions opts = {}) {
        opts.log = [](const std::string&) {};
        options = opts;
        server = std::make_unique<ParamServer>(broker, options);
        broker.subscribe("probe", TopicFilter("sdflmq/session/+/global_update"),
                         [this](const Topic&, const Bytes&) { ++rebroadcasts; });
    }
};

} // namespace

TEST_SUITE("paramserver") {

TEST_CASE("first result per round is stored and rebroadcast exactly once") {
    Fixture fx;
    push_global(fx.root, "s1", 1, 2.5f, 42.0);
    CHECK(fx.rebroadcasts == 1);

    auto stored = fx.server->get_global("s1", 1);
    REQUIRE(stored.has_value());
    CHECK(*stored == params_of(2.5f));
    CHECK(fx.server->global_record("s1", 1)->weight == doctest::Approx(42.0));

    // Duplicate for the same round: ignored, no second broadcast.
    push_global(fx.root, "s1", 1, 9.9f);
    CHECK(fx.rebroadcasts == 1);
    CHECK(fx.server->duplicate_count() == 1);
    CHECK(*fx.server->get_global("s1", 1) == params_of(2.5f));
}

TEST_CASE("round regression is flagged and not stored") {
    Fixture fx;
    push_global(fx.root, "s1", 3, 1.0f);
    push_global(fx.root, "s1", 2, 2.0f);
    CHECK(fx.server->regression_count() == 1);
    CHECK_FALSE(fx.server->get_global("s1", 2).has_value());
    CHECK(fx.rebroadcasts == 1);
}

TEST_CASE("get_global answers per round and latest") {
    Fixture fx;
    push_global(fx.root, "s1", 1, 1.0f);
    push_global(fx.root, "s1", 2, 2.0f);
    push_global(fx.root, "s1", 3, 3.0f);

    CHECK(*fx.server->get_global("s1", 2) == params_of(2.0f));
    CHECK(*fx.server->get_latest("s1") == params_of(3.0f));
    CHECK_FALSE(fx.server->get_global("s1", 9).has_value());
    CHECK_FALSE(fx.server->get_global("unknown", 1).has_value());
    CHECK_FALSE(fx.server->get_latest("unknown").has_value());
}

TEST_CASE("sessions are independent") {
    Fixture fx;
    push_global(fx.root, "s1", 1, 1.0f);
    push_global(fx.root, "s2", 1, 2.0f);
    CHECK(*fx.server->get_global("s1", 1) == params_of(1.0f));
    CHECK(*fx.server->get_global("s2", 1) == params_of(2.0f));
    CHECK(fx.rebroadcasts == 2);
}

TEST_CASE("retention keeps only the last rounds in memory") {
    ParamServerOptions options;
    options.retention_rounds = 8;
    Fixture fx(options);
    for (std::uint32_t round = 1; round <= 12; ++round) {
        push_global(fx.root, "s1", round, static_cast<float>(round));
    }
    CHECK(fx.server->stored_rounds("s1") ==
          std::vector<std::uint32_t>{5, 6, 7, 8, 9, 10, 11, 12});
    CHECK_FALSE(fx.server->get_global("s1", 4).has_value());
    CHECK(*fx.server->get_latest("s1") == params_of(12.0f));
}

TEST_CASE("persistence appends every stored round and loads back") {
    const std::string path =
        (std::filesystem::temp_directory_path() / "sdflmq_pserver_test.bin").string();
    std::remove(path.c_str());

    {
        ParamServerOptions options;
        options.persist_path = path;
        Fixture fx(options);
        push_global(fx.root, "s1", 1, 1.5f);
        push_global(fx.root, "s1", 2, 2.5f);
        push_global(fx.root, "s2", 1, 7.0f);
        push_global(fx.root, "s1", 2, 9.9f); // duplicate: not persisted
    }

    const auto records = ParamServer::load_persisted(path);
    REQUIRE(records.size() == 3);
    CHECK(records[0].session_id == "s1");
    CHECK(records[0].round == 1);
    CHECK(records[0].params == params_of(1.5f));
    CHECK(records[1].round == 2);
    CHECK(records[1].params == params_of(2.5f));
    CHECK(records[2].session_id == "s2");

    std::remove(path.c_str());
    CHECK_THROWS_AS(ParamServer::load_persisted(path), ValidationError);
}

} // TEST_SUITE
