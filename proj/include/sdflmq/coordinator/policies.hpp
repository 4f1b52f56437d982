#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sdflmq/coordinator/topology.hpp"
#include "sdflmq/stats.hpp"

namespace sdflmq::coord {

struct OptimizerContext {
    const ClusterTopology& current;
    const std::map<std::string, PreferredRole>& members; // the live member set
    const std::map<std::string, ClientStats>& stats;     // may miss entries
    ClusteringPolicy clustering;
};

// A policy returns the member ordering used to rebuild the topology (first
// aggregator-count entries become heads, first of those the root), or nullopt
// to keep the current topology untouched.
using OptimizerPolicy = std::function<std::optional<std::vector<std::string>>(
    const OptimizerContext& context)>;

// Named optimizer policies ("the optimizer is a modular logic"): built-ins are
// "static", "memory-greedy" and "round-robin"; applications register more.
class OptimizerRegistry {
public:
    static OptimizerRegistry& instance();

    void register_policy(const std::string& name, OptimizerPolicy policy);
    OptimizerPolicy get(const std::string& name) const; // throws ConfigError
    std::vector<std::string> names() const;

private:
    OptimizerRegistry();
    std::map<std::string, OptimizerPolicy> policies_;
};

// Applies the named policy and rebuilds the aggregation tree for the live
// member set. "static" with an unchanged member set returns the input topology
// structurally unchanged.
ClusterTopology optimize_roles(const ClusterTopology& current,
                               const std::map<std::string, PreferredRole>& members,
                               const std::map<std::string, ClientStats>& stats,
                               const std::string& policy_name,
                               const ClusteringPolicy& clustering);

} // namespace sdflmq::coord
