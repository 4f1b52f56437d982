#include "sdflmq/coordinator/policies.hpp"

#include <algorithm>
#include <set>

#include "sdflmq/errors.hpp"

namespace sdflmq::coord {

namespace {

std::vector<std::string> sorted_member_ids(const std::map<std::string, PreferredRole>& members) {
    std::vector<std::string> ids;
    ids.reserve(members.size());
    for (const auto& [id, preferred] : members) {
        ids.push_back(id);
    }
    return ids; // std::map iterates in sorted order
}

std::vector<std::string> current_heads_in_rank_order(const ClusterTopology& topology) {
    std::vector<std::string> heads;
    for (const auto& layer : topology.layers) {
        for (const auto& id : layer) {
            if (topology.is_head(id)) {
                heads.push_back(id); // root first, then intermediates
            }
        }
    }
    return heads;
}

std::optional<std::vector<std::string>> static_policy(const OptimizerContext&) {
    return std::nullopt;
}

std::optional<std::vector<std::string>> memory_greedy_policy(const OptimizerContext& context) {
    // Ranking-based: heads are the clients with the most free memory, missing
    // stats count as worst case, ties resolved by ascending client id.
    std::vector<std::string> ordering = sorted_member_ids(context.members);
    std::stable_sort(ordering.begin(), ordering.end(),
                     [&](const std::string& a, const std::string& b) {
                         auto memory = [&](const std::string& id) -> std::uint64_t {
                             auto it = context.stats.find(id);
                             return it == context.stats.end() ? 0 : it->second.free_memory;
                         };
                         const auto ma = memory(a);
                         const auto mb = memory(b);
                         if (ma != mb) {
                             return ma > mb;
                         }
                         return a < b;
                     });
    return ordering;
}

std::optional<std::vector<std::string>> round_robin_policy(const OptimizerContext& context) {
    // Every head moves one position forward through the member list ordered by
    // client id; freed slots are filled from the front of that list.
    const std::vector<std::string> ids = sorted_member_ids(context.members);
    const std::size_t n = ids.size();
    auto position_of = [&](const std::string& id) -> std::optional<std::size_t> {
        auto it = std::lower_bound(ids.begin(), ids.end(), id);
        if (it == ids.end() || *it != id) {
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - ids.begin());
    };

    const std::size_t target = aggregator_count(context.clustering, n);
    std::vector<std::string> heads;
    std::set<std::string> chosen;
    for (const auto& head : current_heads_in_rank_order(context.current)) {
        auto pos = position_of(head);
        if (!pos.has_value()) {
            continue; // head left the session
        }
        const std::string& shifted = ids[(*pos + 1) % n];
        if (chosen.insert(shifted).second) {
            heads.push_back(shifted);
        }
    }
    for (const auto& id : ids) {
        if (heads.size() >= target) {
            break;
        }
        if (chosen.insert(id).second) {
            heads.push_back(id);
        }
    }
    heads.resize(std::min(heads.size(), target));

    std::vector<std::string> ordering = heads;
    const std::set<std::string> head_set(heads.begin(), heads.end());
    for (const auto& id : ids) {
        if (!head_set.contains(id)) {
            ordering.push_back(id);
        }
    }
    return ordering;
}

} // namespace

OptimizerRegistry::OptimizerRegistry() {
    policies_["static"] = static_policy;
    policies_["memory-greedy"] = memory_greedy_policy;
    policies_["round-robin"] = round_robin_policy;
}

OptimizerRegistry& OptimizerRegistry::instance() {
    static OptimizerRegistry registry;
    return registry;
}

void OptimizerRegistry::register_policy(const std::string& name, OptimizerPolicy policy) {
    if (name.empty() || !policy) {
        throw ConfigError("optimizer policy needs a name and a callable");
    }
    policies_[name] = std::move(policy);
}

OptimizerPolicy OptimizerRegistry::get(const std::string& name) const {
    auto it = policies_.find(name);
    if (it == policies_.end()) {
        throw ConfigError("unknown optimizer policy: " + name);
    }
    return it->second;
}

std::vector<std::string> OptimizerRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [name, policy] : policies_) {
        out.push_back(name);
    }
    return out;
}

ClusterTopology optimize_roles(const ClusterTopology& current,
                               const std::map<std::string, PreferredRole>& members,
                               const std::map<std::string, ClientStats>& stats,
                               const std::string& policy_name,
                               const ClusteringPolicy& clustering) {
    if (members.empty()) {
        throw ValidationError("cannot optimize roles for an empty member set");
    }
    const OptimizerPolicy policy = OptimizerRegistry::instance().get(policy_name);

    bool membership_changed = members.size() != current.nodes.size();
    if (!membership_changed) {
        for (const auto& [id, preferred] : members) {
            if (!current.nodes.contains(id)) {
                membership_changed = true;
                break;
            }
        }
    }

    const auto ordering = policy({current, members, stats, clustering});
    if (!ordering.has_value()) {
        if (!membership_changed) {
            return current;
        }
        // A keep-as-is policy still has to rebuild when members joined or left.
        return build_clusters(current.session_id, members, clustering);
    }
    return build_clusters(current.session_id, members, clustering, *ordering);
}

} // namespace sdflmq::coord
