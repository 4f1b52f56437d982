#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sdflmq/clock.hpp"
#include "sdflmq/fleet/endpoint.hpp"
#include "sdflmq/model/parameters.hpp"
#include "sdflmq/protocol.hpp"
#include "sdflmq/transport/broker.hpp"

namespace sdflmq::pserver {

struct ParamServerOptions {
    std::size_t retention_rounds = 8; // per session, kept in memory
    std::string persist_path;         // empty: no persistence
    std::function<void(const std::string&)> log;
};

struct GlobalRecord {
    std::uint32_t round = 0;
    double weight = 0.0;
    model::ModelParameters params;
    TimePoint received{};
};

struct PersistedRecord {
    std::string session_id;
    std::uint32_t round = 0;
    model::ModelParameters params;
};

// Global model repository. Listens on sdflmq/global/+ for root results, stores
// them write-once per (session, round) and rebroadcasts each exactly once on
// the session's global-update topic. May run in-process with the coordinator
// or standalone; both modes share this code path.
class ParamServer {
public:
    ParamServer(transport::Broker& broker, ParamServerOptions options = {},
                const Clock& clock = SteadyClock::instance());

    ParamServer(const ParamServer&) = delete;
    ParamServer& operator=(const ParamServer&) = delete;

    std::optional<model::ModelParameters> get_global(const std::string& session_id,
                                                     std::uint32_t round) const;
    std::optional<model::ModelParameters> get_latest(const std::string& session_id) const;

    std::optional<GlobalRecord> global_record(const std::string& session_id,
                                              std::uint32_t round) const;
    std::vector<std::uint32_t> stored_rounds(const std::string& session_id) const;

    std::size_t duplicate_count() const;
    std::size_t regression_count() const;

    // Reads back an append-only persistence file.
    static std::vector<PersistedRecord> load_persisted(const std::string& path);

private:
    void on_root_result(const protocol::ModelUpdateFrame& frame);
    void persist(const std::string& session_id, std::uint32_t round,
                 const model::ModelParameters& params);
    void log(const std::string& line) const;

    transport::Broker& broker_;
    ParamServerOptions options_;
    const Clock& clock_;
    fleet::Endpoint endpoint_;

    mutable std::mutex mutex_;
    std::map<std::string, std::map<std::uint32_t, GlobalRecord>> sessions_;
    std::map<std::string, std::uint32_t> max_round_;
    std::size_t duplicates_ = 0;
    std::size_t regressions_ = 0;
};

} // namespace sdflmq::pserver
