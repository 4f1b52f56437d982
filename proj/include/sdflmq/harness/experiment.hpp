#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "sdflmq/harness/scenario.hpp"

namespace sdflmq::harness {

// Runs one embedded scenario: in-memory broker (optionally with the
// deterministic latency model), coordinator, parameter server and one thread
// per simulated client. Accuracy columns are reproducible bit-for-bit per
// seed; wall-clock delays carry timer jitter.
ExperimentResult run_experiment(const ScenarioConfig& config,
                                std::function<void(const std::string&)> log = {});

// CSV schema: round,delay_ms,train_ms,agg_ms,transport_ms,accuracy
void write_rounds_csv(std::ostream& out, const ExperimentResult& result);

struct ComparisonRow {
    std::size_t n_clients = 0;
    double single_total_ms = 0.0;
    double hierarchical_total_ms = 0.0;
    double gap_ms = 0.0; // single - hierarchical
    double single_accuracy = 0.0;
    double hierarchical_accuracy = 0.0;
};

// Runs the base scenario for every client count under both clustering
// policies and reports the per-N delay gap series.
std::vector<ComparisonRow> compare_topologies(const ScenarioConfig& base,
                                              const std::vector<std::size_t>& client_counts,
                                              std::function<void(const std::string&)> log = {});

// CSV schema: n_clients,single_total_ms,hierarchical_total_ms,gap_ms,
//             single_accuracy,hierarchical_accuracy
void write_summary_csv(std::ostream& out, const std::vector<ComparisonRow>& rows);

} // namespace sdflmq::harness
