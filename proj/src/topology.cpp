#include "sdflmq/coordinator/topology.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "sdflmq/errors.hpp"

namespace sdflmq::coord {

std::string to_string(Role role) {
    switch (role) {
    case Role::kAggregator: return "aggregator";
    case Role::kTrainerAggregator: return "trainer_aggregator";
    case Role::kTrainer: return "trainer";
    }
    throw ValidationError("unknown role value");
}

Role role_from_string(const std::string& s) {
    if (s == "aggregator") return Role::kAggregator;
    if (s == "trainer_aggregator") return Role::kTrainerAggregator;
    if (s == "trainer") return Role::kTrainer;
    throw ValidationError("unknown role: " + s);
}

std::string to_string(PreferredRole role) {
    switch (role) {
    case PreferredRole::kAggregator: return "aggregator";
    case PreferredRole::kTrainerAggregator: return "trainer_aggregator";
    case PreferredRole::kTrainer: return "trainer";
    }
    throw ValidationError("unknown preferred role value");
}

PreferredRole preferred_role_from_string(const std::string& s) {
    if (s == "aggregator") return PreferredRole::kAggregator;
    if (s == "trainer_aggregator") return PreferredRole::kTrainerAggregator;
    if (s == "trainer") return PreferredRole::kTrainer;
    throw ValidationError("unknown preferred role: " + s);
}

ClusteringPolicy ClusteringPolicy::single() {
    return ClusteringPolicy{Kind::kSingle, 2, 0.0};
}

ClusteringPolicy ClusteringPolicy::hierarchical(std::size_t layers, double fraction) {
    if (layers != 3) {
        throw ConfigError("hierarchical clustering supports exactly 3 layers");
    }
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw ConfigError("aggregator fraction must be in (0, 1]");
    }
    return ClusteringPolicy{Kind::kHierarchical, layers, fraction};
}

ClusteringPolicy ClusteringPolicy::parse(const std::string& name) {
    if (name == "single") {
        return single();
    }
    if (name == "hierarchical") {
        return hierarchical();
    }
    throw ConfigError("unknown clustering policy: " + name);
}

std::string ClusteringPolicy::name() const {
    return kind == Kind::kSingle ? "single" : "hierarchical";
}

std::size_t aggregator_count(const ClusteringPolicy& policy, std::size_t n_members) {
    if (policy.kind == ClusteringPolicy::Kind::kSingle || n_members <= 1) {
        return 1;
    }
    auto count = static_cast<std::size_t>(
        std::ceil(policy.aggregator_fraction * static_cast<double>(n_members)));
    count = std::max<std::size_t>(1, count);
    return std::min(count, n_members);
}

const std::string& ClusterTopology::root() const {
    if (layers.empty() || layers[0].size() != 1) {
        throw StateError("topology has no root");
    }
    return layers[0][0];
}

std::vector<std::string> ClusterTopology::children_of(const std::string& client_id) const {
    std::vector<std::string> children;
    for (const auto& [id, node] : nodes) {
        if (node.parent == client_id) {
            children.push_back(id);
        }
    }
    return children;
}

bool ClusterTopology::is_head(const std::string& client_id) const {
    auto it = nodes.find(client_id);
    return it != nodes.end() && it->second.role != Role::kTrainer;
}

void ClusterTopology::validate() const {
    if (layers.empty() || nodes.empty()) {
        throw ValidationError("topology must not be empty");
    }
    if (layers[0].size() != 1) {
        throw ValidationError("layer 0 must contain exactly the root");
    }
    std::size_t in_layers = 0;
    std::map<std::string, std::uint32_t> layer_of;
    for (std::uint32_t l = 0; l < layers.size(); ++l) {
        for (const auto& id : layers[l]) {
            if (!layer_of.emplace(id, l).second) {
                throw ValidationError("client appears in two layers: " + id);
            }
            ++in_layers;
        }
    }
    if (in_layers != nodes.size()) {
        throw ValidationError("layer membership does not cover the node set");
    }

    std::size_t roots = 0;
    std::size_t upward_edges = 0;
    for (const auto& [id, node] : nodes) {
        auto layer_it = layer_of.find(id);
        if (layer_it == layer_of.end()) {
            throw ValidationError("node missing from layers: " + id);
        }
        if (node.layer != layer_it->second) {
            throw ValidationError("node layer field disagrees with layer list: " + id);
        }
        if (!node.parent.has_value()) {
            ++roots;
            if (layer_it->second != 0) {
                throw ValidationError("parent-less node outside layer 0: " + id);
            }
            continue;
        }
        ++upward_edges;
        auto parent_it = nodes.find(*node.parent);
        if (parent_it == nodes.end()) {
            throw ValidationError("parent not in topology: " + *node.parent);
        }
        if (layer_of.at(*node.parent) >= layer_it->second) {
            throw ValidationError("parent must live in a lower layer: " + id);
        }
        if (parent_it->second.role == Role::kTrainer) {
            throw ValidationError("trainer cannot have children: " + *node.parent);
        }
    }
    if (roots != 1) {
        throw ValidationError("topology must have exactly one root");
    }

    std::size_t expected_total = 0;
    for (const auto& [id, node] : nodes) {
        const auto children = children_of(id);
        if (node.role == Role::kTrainer) {
            if (!children.empty()) {
                throw ValidationError("trainer must be a leaf: " + id);
            }
            if (node.expected_inputs != 0) {
                throw ValidationError("trainer must expect zero inputs: " + id);
            }
            continue;
        }
        const std::uint32_t own = node.role == Role::kTrainerAggregator ? 1 : 0;
        if (node.expected_inputs != children.size() + own) {
            throw ValidationError("expected_inputs of " + id + " must be children + own flag");
        }
        expected_total += node.expected_inputs - own;
    }
    // Flow conservation: every non-root node sends exactly one update upward.
    if (expected_total != nodes.size() - 1) {
        throw ValidationError("expected input counts do not conserve update flow");
    }
}

ClusterTopology build_clusters(const std::string& session_id,
                               const std::map<std::string, PreferredRole>& members,
                               const ClusteringPolicy& policy,
                               const std::vector<std::string>& head_order) {
    if (members.empty()) {
        throw ValidationError("cannot cluster an empty member set");
    }

    std::vector<std::string> ordering;
    if (!head_order.empty()) {
        if (head_order.size() != members.size()) {
            throw ValidationError("head order must cover every member");
        }
        std::set<std::string> seen;
        for (const auto& id : head_order) {
            if (!members.contains(id) || !seen.insert(id).second) {
                throw ValidationError("head order must be a permutation of the members");
            }
        }
        ordering = head_order;
    } else {
        for (const auto& [id, preferred] : members) {
            ordering.push_back(id);
        }
        std::stable_sort(ordering.begin(), ordering.end(),
                         [&](const std::string& a, const std::string& b) {
                             auto rank = [&](const std::string& id) {
                                 return members.at(id) == PreferredRole::kTrainer ? 1 : 0;
                             };
                             return std::pair(rank(a), a) < std::pair(rank(b), b);
                         });
    }

    const std::size_t n = members.size();
    const std::size_t n_heads = aggregator_count(policy, n);

    std::vector<std::string> heads(ordering.begin(), ordering.begin() + n_heads);
    std::vector<std::string> trainers;
    for (const auto& [id, preferred] : members) {
        if (std::find(heads.begin(), heads.end(), id) == heads.end()) {
            trainers.push_back(id); // members map iterates in sorted id order
        }
    }

    ClusterTopology topology;
    topology.session_id = session_id;

    auto head_role = [&](const std::string& id) {
        return members.at(id) == PreferredRole::kTrainerAggregator ? Role::kTrainerAggregator
                                                                   : Role::kAggregator;
    };

    const std::string& root = heads[0];
    std::vector<std::string> intermediates(heads.begin() + 1, heads.end());
    std::sort(intermediates.begin(), intermediates.end());

    topology.layers.push_back({root});
    topology.nodes[root] = {head_role(root), std::nullopt, 0, 0};

    std::uint32_t trainer_layer = 1;
    std::vector<std::string> trainer_parents;
    if (intermediates.empty()) {
        trainer_parents = {root};
    } else {
        topology.layers.push_back(intermediates);
        for (const auto& id : intermediates) {
            topology.nodes[id] = {head_role(id), root, 0, 1};
        }
        trainer_parents = intermediates;
        trainer_layer = 2;
    }

    if (!trainers.empty()) {
        topology.layers.push_back(trainers);
        for (std::size_t i = 0; i < trainers.size(); ++i) {
            const std::string& parent = trainer_parents[i % trainer_parents.size()];
            topology.nodes[trainers[i]] = {Role::kTrainer, parent, 0, trainer_layer};
        }
    }

    for (auto& [id, node] : topology.nodes) {
        if (node.role == Role::kTrainer) {
            continue;
        }
        const auto children = topology.children_of(id);
        const std::uint32_t own = node.role == Role::kTrainerAggregator ? 1 : 0;
        node.expected_inputs = static_cast<std::uint32_t>(children.size()) + own;
    }

    topology.validate();
    return topology;
}

std::vector<RoleChange> compute_role_delta(const ClusterTopology& old_topology,
                                           const ClusterTopology& new_topology) {
    auto assignment_key = [](const NodeAssignment& a) {
        return std::tuple(a.role, a.parent, a.expected_inputs);
    };

    std::vector<RoleChange> delta;
    for (const auto& [id, node] : new_topology.nodes) {
        auto old_it = old_topology.nodes.find(id);
        if (old_it == old_topology.nodes.end()) {
            delta.push_back({id, std::nullopt, node});
        } else if (assignment_key(old_it->second) != assignment_key(node)) {
            delta.push_back({id, old_it->second, node});
        }
    }
    for (const auto& [id, node] : old_topology.nodes) {
        if (!new_topology.nodes.contains(id)) {
            delta.push_back({id, node, std::nullopt});
        }
    }
    return delta;
}

std::string ClusterTopology::to_json_string() const {
    nlohmann::json nodes_json = nlohmann::json::object();
    for (const auto& [id, node] : nodes) {
        nlohmann::json entry = {
            {"role", to_string(node.role)},
            {"expected_inputs", node.expected_inputs},
            {"layer", node.layer},
        };
        if (node.parent.has_value()) {
            entry["parent"] = *node.parent;
        }
        nodes_json[id] = std::move(entry);
    }
    nlohmann::json doc = {
        {"session_id", session_id},
        {"layers", layers},
        {"nodes", std::move(nodes_json)},
    };
    return doc.dump();
}

ClusterTopology ClusterTopology::from_json_string(const std::string& text) {
    try {
        auto doc = nlohmann::json::parse(text);
        ClusterTopology topology;
        topology.session_id = doc.at("session_id").get<std::string>();
        topology.layers = doc.at("layers").get<std::vector<std::vector<std::string>>>();
        for (const auto& [id, entry] : doc.at("nodes").items()) {
            NodeAssignment node;
            node.role = role_from_string(entry.at("role").get<std::string>());
            node.expected_inputs = entry.at("expected_inputs").get<std::uint32_t>();
            node.layer = entry.at("layer").get<std::uint32_t>();
            if (entry.contains("parent")) {
                node.parent = entry.at("parent").get<std::string>();
            }
            topology.nodes[id] = std::move(node);
        }
        return topology;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad topology JSON: ") + e.what());
    }
}

} // namespace sdflmq::coord
