#include "sdflmq/stats.hpp"

#include <json.hpp>

#include "sdflmq/errors.hpp"

namespace sdflmq {

void validate(const ClientStats& stats) {
    if (stats.client_id.empty()) {
        throw ValidationError("client stats need a client id");
    }
    if (stats.bandwidth < 0.0) {
        throw ValidationError("bandwidth must be non-negative");
    }
    if (stats.cpu_utilization < 0.0 || stats.cpu_utilization > 1.0) {
        throw ValidationError("cpu utilization must be within [0, 1]");
    }
}

std::string stats_to_json(const ClientStats& stats) {
    nlohmann::json doc = {
        {"client_id", stats.client_id},
        {"free_memory", stats.free_memory},
        {"bandwidth", stats.bandwidth},
        {"cpu_utilization", stats.cpu_utilization},
        {"degraded", stats.degraded},
    };
    if (stats.last_loss.has_value()) {
        doc["loss"] = *stats.last_loss;
    }
    if (stats.last_accuracy.has_value()) {
        doc["accuracy"] = *stats.last_accuracy;
    }
    return doc.dump();
}

ClientStats stats_from_json(const std::string& text) {
    try {
        auto doc = nlohmann::json::parse(text);
        ClientStats stats;
        stats.client_id = doc.at("client_id").get<std::string>();
        stats.free_memory = doc.at("free_memory").get<std::uint64_t>();
        stats.bandwidth = doc.at("bandwidth").get<double>();
        stats.cpu_utilization = doc.at("cpu_utilization").get<double>();
        stats.degraded = doc.at("degraded").get<bool>();
        if (doc.contains("loss")) {
            stats.last_loss = doc.at("loss").get<double>();
        }
        if (doc.contains("accuracy")) {
            stats.last_accuracy = doc.at("accuracy").get<double>();
        }
        validate(stats);
        return stats;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad stats JSON: ") + e.what());
    } catch (const ValidationError& e) {
        throw ParseError(std::string("bad stats JSON: ") + e.what());
    }
}

} // namespace sdflmq
