#include <doctest.h>

#include <sstream>

#include "sdflmq/errors.hpp"
#include "sdflmq/harness/experiment.hpp"

using namespace sdflmq;
using namespace sdflmq::harness;

namespace {

ScenarioConfig small_config() {
    ScenarioConfig config;
    config.n_clients = 3;
    config.clustering = coord::ClusteringPolicy::single();
    config.fl_rounds = 2;
    config.epochs = 2;
    config.learning_rate = 0.3;
    config.model_family = "logistic";
    config.dataset.n_classes = 4;
    config.dataset.n_features = 6;
    config.dataset.train_samples = 600;
    config.dataset.test_samples = 200;
    config.dataset.per_client_fraction = 0.2;
    config.seed = 5;
    config.session_id = "harness_small";
    return config;
}

} // namespace

TEST_SUITE("harness") {

TEST_CASE("scenario JSON round-trips") {
    ScenarioConfig config = small_config();
    config.latency = transport::LatencyModel{std::chrono::microseconds(5000),
                                             std::chrono::nanoseconds(10)};
    const auto copy = ScenarioConfig::from_json_string(config.to_json_string());
    CHECK(copy.n_clients == config.n_clients);
    CHECK(copy.clustering.name() == "single");
    CHECK(copy.fl_rounds == config.fl_rounds);
    CHECK(copy.model_family == "logistic");
    CHECK(copy.dataset.per_client_fraction ==
          doctest::Approx(config.dataset.per_client_fraction));
    REQUIRE(copy.latency.has_value());
    CHECK(copy.latency->per_message == std::chrono::microseconds(5000));
    CHECK(copy.latency->per_byte == std::chrono::nanoseconds(10));

    CHECK_THROWS_AS(ScenarioConfig::from_json_string("{]"), ConfigError);
}

TEST_CASE("config validation catches impossible setups") {
    ScenarioConfig config = small_config();
    config.n_clients = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);

    config = small_config();
    config.dataset.per_client_fraction = 0.5; // 3 * 0.5 > 1
    CHECK_THROWS_AS(config.validate(), ConfigError);

    config = small_config();
    config.model_family = "transformer";
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("dataset spec strings parse") {
    const auto synthetic = DatasetSpec::parse("synthetic:4,6,500");
    CHECK(synthetic.n_classes == 4);
    CHECK(synthetic.n_features == 6);
    CHECK(synthetic.train_samples == 500);
    CHECK(DatasetSpec::parse("csv:/tmp/data.csv").path == "/tmp/data.csv");
    CHECK(DatasetSpec::parse("mnist:/data").kind == DatasetSpec::Kind::kMnist);
    CHECK_THROWS_AS(DatasetSpec::parse("parquet:/x"), ConfigError);
    CHECK_THROWS_AS(DatasetSpec::parse("csv:"), ConfigError);
}

TEST_CASE("an embedded scenario runs to completion with sane records") {
    auto result = run_experiment(small_config());
    REQUIRE(result.rounds.size() == 2);
    for (const auto& record : result.rounds) {
        CHECK(record.delay_ms > 0.0);
        CHECK(record.train_ms >= 0.0);
        CHECK(record.train_ms + record.agg_ms + record.transport_ms <=
              record.delay_ms + 1.0); // phases stay within the total plus slack
        CHECK(record.accuracy > 0.3); // far above the 0.25 chance level
    }
    CHECK(result.final_accuracy == result.rounds.back().accuracy);
    CHECK(result.root_weight == doctest::Approx(3 * 120.0)); // 3 shards of 600*0.2
}

TEST_CASE("seeded scenarios reproduce accuracy columns bit-for-bit") {
    ScenarioConfig config = small_config();
    config.session_id = "harness_repro_a";
    auto first = run_experiment(config);
    config.session_id = "harness_repro_b";
    auto second = run_experiment(config);
    REQUIRE(first.rounds.size() == second.rounds.size());
    for (std::size_t i = 0; i < first.rounds.size(); ++i) {
        CHECK(first.rounds[i].accuracy == second.rounds[i].accuracy);
    }
}

TEST_CASE("hierarchical clustering with too few clients degrades to single") {
    ScenarioConfig config = small_config();
    config.n_clients = 2;
    config.dataset.per_client_fraction = 0.3;
    config.clustering = coord::ClusteringPolicy::hierarchical();
    config.session_id = "harness_degrade";
    auto result = run_experiment(config);
    CHECK(result.topology == "single");
    CHECK(result.rounds.size() == 2);
}

TEST_CASE("rounds CSV carries the documented schema") {
    auto result = run_experiment(small_config());
    std::ostringstream out;
    write_rounds_csv(out, result);
    const std::string text = out.str();
    CHECK(text.starts_with("round,delay_ms,train_ms,agg_ms,transport_ms,accuracy\n"));
    CHECK(text.find("total,") != std::string::npos);
}

TEST_CASE("topology comparison produces one row per client count") {
    ScenarioConfig base = small_config();
    base.fl_rounds = 2;
    base.epochs = 1;
    base.dataset.per_client_fraction = 0.05;
    base.session_id = "harness_cmp";
    auto rows = compare_topologies(base, {4, 5});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].n_clients == 4);
    CHECK(rows[1].n_clients == 5);
    for (const auto& row : rows) {
        CHECK(row.single_total_ms > 0.0);
        CHECK(row.hierarchical_total_ms > 0.0);
        CHECK(row.gap_ms == doctest::Approx(row.single_total_ms - row.hierarchical_total_ms));
    }

    std::ostringstream out;
    write_summary_csv(out, rows);
    CHECK(out.str().starts_with(
        "n_clients,single_total_ms,hierarchical_total_ms,gap_ms,single_accuracy,"
        "hierarchical_accuracy\n"));
}

} // TEST_SUITE
