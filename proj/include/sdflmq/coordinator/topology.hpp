#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sdflmq::coord {

enum class Role {
    kAggregator,
    kTrainerAggregator,
    kTrainer,
};

enum class PreferredRole {
    kTrainer,
    kAggregator,
    kTrainerAggregator,
};

std::string to_string(Role role);
Role role_from_string(const std::string& s); // throws ValidationError
std::string to_string(PreferredRole role);
PreferredRole preferred_role_from_string(const std::string& s);

struct ClusteringPolicy {
    enum class Kind { kSingle, kHierarchical };
    Kind kind = Kind::kSingle;
    std::size_t layers = 3;          // hierarchical only; the supported depth is 3
    double aggregator_fraction = 0.3;

    static ClusteringPolicy single();
    static ClusteringPolicy hierarchical(std::size_t layers = 3, double fraction = 0.3);
    static ClusteringPolicy parse(const std::string& name); // "single" | "hierarchical"
    std::string name() const;
};

struct NodeAssignment {
    Role role = Role::kTrainer;
    std::optional<std::string> parent; // empty for the root
    std::uint32_t expected_inputs = 0;
    std::uint32_t layer = 0;

    bool operator==(const NodeAssignment&) const = default;
};

// Rooted aggregation tree for one session: layer 0 is the single root, trainers
// are always leaves, and a head's expected_inputs equals its child count plus
// one when the head also trains.
struct ClusterTopology {
    std::string session_id;
    std::vector<std::vector<std::string>> layers;
    std::map<std::string, NodeAssignment> nodes;

    const std::string& root() const; // throws StateError when empty
    std::vector<std::string> children_of(const std::string& client_id) const;
    bool is_head(const std::string& client_id) const;

    void validate() const; // throws ValidationError on any broken invariant

    std::string to_json_string() const;
    static ClusterTopology from_json_string(const std::string& text); // throws ParseError

    bool operator==(const ClusterTopology&) const = default;
};

// Clusters members into an aggregation tree. head_order, when given, lists all
// members in head-priority order (the first aggregator-count entries become
// heads, first of them the root); otherwise members that prefer aggregation
// come first, ties broken by client id. Trainers are attached round-robin in
// client-id order.
ClusterTopology build_clusters(const std::string& session_id,
                               const std::map<std::string, PreferredRole>& members,
                               const ClusteringPolicy& policy,
                               const std::vector<std::string>& head_order = {});

// Number of aggregators the policy assigns to n members: max(1, ceil(fraction*n))
// for hierarchical, 1 for single.
std::size_t aggregator_count(const ClusteringPolicy& policy, std::size_t n_members);

struct RoleChange {
    std::string client_id;
    std::optional<NodeAssignment> old_assignment; // empty: client is new
    std::optional<NodeAssignment> new_assignment; // empty: client left the topology

    bool operator==(const RoleChange&) const = default;
};

// Clients whose (role, parent, expected_inputs) changed between the two
// topologies, including joins and departures. Equal topologies yield an empty
// delta; this is exactly the set of clients that receives a targeted message.
std::vector<RoleChange> compute_role_delta(const ClusterTopology& old_topology,
                                           const ClusterTopology& new_topology);

} // namespace sdflmq::coord
