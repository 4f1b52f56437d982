#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace sdflmq {

// Per-client resource report feeding the coordinator's role optimizer.
struct ClientStats {
    std::string client_id;
    std::uint64_t free_memory = 0;  // bytes
    double bandwidth = 0.0;         // bytes per second
    double cpu_utilization = 0.0;   // fraction of one core budget, [0,1]
    std::optional<double> last_loss;
    std::optional<double> last_accuracy;
    bool degraded = false; // set when the host probe failed and defaults were used

    bool operator==(const ClientStats&) const = default;
};

void validate(const ClientStats& stats); // throws ValidationError

std::string stats_to_json(const ClientStats& stats);
ClientStats stats_from_json(const std::string& text); // throws ParseError

} // namespace sdflmq
