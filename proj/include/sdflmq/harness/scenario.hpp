#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdflmq/coordinator/topology.hpp"
#include "sdflmq/model/dataset.hpp"
#include "sdflmq/transport/inmemory_broker.hpp"

namespace sdflmq::harness {

struct DatasetSpec {
    enum class Kind { kSynthetic, kCsv, kMnist };
    Kind kind = Kind::kSynthetic;
    std::size_t n_classes = 10;
    std::size_t n_features = 20;
    std::size_t train_samples = 20000;
    std::size_t test_samples = 2000;
    double per_client_fraction = 0.01; // disjoint shard per client
    std::string path;                   // CSV file or MNIST IDX directory

    // "synthetic:<classes>,<features>,<samples>" | "csv:<path>" | "mnist:<dir>"
    static DatasetSpec parse(const std::string& text);
};

struct ScenarioConfig {
    std::size_t n_clients = 5;
    coord::ClusteringPolicy clustering = coord::ClusteringPolicy::single();
    std::string optimizer = "static";
    std::uint32_t fl_rounds = 10;
    std::size_t epochs = 5;
    double learning_rate = 0.05;
    std::string model_family = "mlp"; // "logistic" | "mlp"
    std::size_t hidden = 32;
    std::size_t batch_size = 32;
    DatasetSpec dataset;
    std::uint64_t seed = 1;
    std::optional<transport::LatencyModel> latency;
    std::chrono::milliseconds straggler_timeout{60000};
    std::string session_id = "session_01";

    void validate() const; // throws ConfigError

    std::string to_json_string() const;
    static ScenarioConfig from_json_string(const std::string& text);
    static ScenarioConfig load_file(const std::string& path);
};

struct RoundRecord {
    std::string session_id;
    std::uint32_t round = 0;
    double delay_ms = 0.0;
    double train_ms = 0.0;
    double agg_ms = 0.0;
    double transport_ms = 0.0;
    double accuracy = 0.0;
};

struct ExperimentResult {
    std::string session_id;
    std::string topology;
    std::size_t n_clients = 0;
    std::vector<RoundRecord> rounds;
    double total_delay_ms = 0.0;
    double final_accuracy = 0.0;
    double root_weight = 0.0; // aggregate weight of the last global model
};

// Loads train/test data for the spec. Synthetic data is deterministic per seed.
std::pair<model::Dataset, model::Dataset> load_datasets(const DatasetSpec& spec,
                                                        std::uint64_t seed);

// Looks for train-images-idx3-ubyte etc. under dir; empty when absent.
bool mnist_present(const std::string& dir);

} // namespace sdflmq::harness
