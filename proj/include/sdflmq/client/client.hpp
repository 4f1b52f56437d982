#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sdflmq/clock.hpp"
#include "sdflmq/coordinator/topology.hpp"
#include "sdflmq/fleet/endpoint.hpp"
#include "sdflmq/model/parameters.hpp"
#include "sdflmq/protocol.hpp"
#include "sdflmq/stats.hpp"
#include "sdflmq/transport/broker.hpp"

namespace sdflmq::client {

enum class ModelProvenance { kLocal, kGlobal };

struct CreateSessionConfig {
    std::string session_id;
    std::string model_name;
    std::chrono::milliseconds session_time{std::chrono::hours(1)};
    std::chrono::milliseconds waiting_time{std::chrono::minutes(2)};
    std::uint32_t capacity_min = 1;
    std::uint32_t capacity_max = 1;
    std::uint32_t fl_rounds = 1;
    coord::PreferredRole preferred_role = coord::PreferredRole::kTrainerAggregator;
};

struct JoinSessionConfig {
    std::string session_id;
    std::string model_name;
    std::uint32_t fl_rounds = 1;
    coord::PreferredRole preferred_role = coord::PreferredRole::kTrainerAggregator;
};

struct ClientOptions {
    std::chrono::milliseconds request_timeout{30000};
    // Mirrors the coordinator's straggler timeout; the local aggregation
    // deadline is straggler_timeout - aggregation_margin so a head reports
    // before the coordinator times the round out.
    std::chrono::milliseconds straggler_timeout{120000};
    std::chrono::milliseconds aggregation_margin{10000};
    fleet::EndpointOptions endpoint;
    std::function<void(const std::string&)> log;
};

// The round's role as the client sees it.
struct RoleState {
    std::uint32_t round = 0;
    coord::Role role = coord::Role::kTrainer;
    std::string parent_base;
    std::string parent_function;
    std::string inbox_base; // heads only
    std::uint32_t expected_inputs = 0;
    std::vector<std::string> children;
    std::uint32_t layer = 0;

    bool operator==(const RoleState&) const = default;
};

// Per-round aggregation metrics, reported to an observer the harness installs.
struct AggregationMetrics {
    std::string session_id;
    std::uint32_t round = 0;
    std::uint32_t layer = 0;
    std::chrono::nanoseconds compute_time{0};
    std::size_t input_count = 0;
};

// SDFLMQ client: session API, role arbiter, model controller and stats
// reporting. The user's training loop and the broker's message dispatch run
// concurrently against this object; blocking calls are rendezvous points
// between the two.
class Client {
public:
    Client(transport::Broker& broker, std::string client_id, ClientOptions options = {},
           const Clock& clock = SteadyClock::instance());
    ~Client();

    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    // Blocking. Throws ConnectivityError on coordinator timeout; a rejection
    // is surfaced as StateError with the coordinator's reason.
    void create_fl_session(const CreateSessionConfig& config);
    void join_fl_session(const JoinSessionConfig& config);
    void leave_session(const std::string& session_id, const std::string& reason = "");

    void set_model(const std::string& session_id, const model::ModelParameters& params,
                   std::uint64_t n_samples = 1);
    void set_local_metrics(const std::string& session_id, double loss, double accuracy);
    model::ModelParameters model(const std::string& session_id) const;
    ModelProvenance model_provenance(const std::string& session_id) const;

    // Blocks until the next round is open for this client, returns its index.
    std::uint32_t wait_round_start(const std::string& session_id,
                                   std::chrono::milliseconds timeout);
    coord::Role current_role(const std::string& session_id) const; // throws StateError
    std::optional<RoleState> role_state(const std::string& session_id) const;

    // Publishes the local (params, n_samples) update toward the parent
    // aggregation topic; a trainer-aggregator feeds its own aggregation state
    // instead of publishing.
    void send_local(const std::string& session_id);

    // Blocks until the current round's global model arrives, updates the model
    // controller (provenance GLOBAL) and reports readiness + stats.
    model::ModelParameters wait_global_update(const std::string& session_id,
                                              std::chrono::milliseconds timeout);

    // Enforces local aggregation deadlines and reassembly eviction.
    void tick();

    ClientStats collect_stats();
    void set_stats_override(const ClientStats& stats);
    void clear_stats_override();

    void set_aggregation_observer(std::function<void(const AggregationMetrics&)> observer);

    const std::string& client_id() const { return client_id_; }

private:
    struct AggregationState {
        std::uint32_t round = 0;
        bool armed = false;
        bool fired = false;
        bool own_added = false;
        TimePoint deadline{};
        std::set<std::string> allowed_senders;
        std::map<std::string, protocol::ModelUpdateFrame> received; // latest per sender
    };

    struct BufferedInput {
        protocol::ModelUpdateFrame frame;
    };

    // Snapshot of everything an aggregation flush needs, taken while the lock
    // is held; the flush itself runs without it.
    struct FirePlan {
        std::string session_id;
        std::uint32_t round = 0;
        std::uint32_t layer = 0;
        std::string parent_base;
        std::string parent_function;
        std::vector<protocol::ModelUpdateFrame> inputs;
    };

    struct SessionCtx {
        std::string model_name;
        bool terminated = false;
        std::string terminal_state;

        std::optional<RoleState> role;
        coord::ClusterTopology topology; // last broadcast

        std::optional<model::ModelParameters> params;
        ModelProvenance provenance = ModelProvenance::kLocal;
        std::uint64_t n_samples = 1;
        std::optional<double> last_loss;
        std::optional<double> last_accuracy;
        std::optional<model::ModelParameters> schema;

        std::uint32_t current_round = 0;    // latest round_start received
        std::uint32_t sent_round = 0;       // last round send_local ran for
        std::uint32_t last_global_round = 0;
        std::uint32_t readiness_round = 0;  // last round readiness was sent for
        std::map<std::uint32_t, protocol::ModelUpdateFrame> globals;

        AggregationState agg;
        std::map<std::uint32_t, std::vector<BufferedInput>> pending_inputs;
        std::vector<std::string> last_missing; // stragglers seen at the last fire

        std::optional<protocol::SessionResponse> response;
    };

    void bind_session_topics(const std::string& session_id);
    void unbind_session_topics(const std::string& session_id);
    protocol::SessionResponse wait_response(const std::string& session_id, const char* verb);

    void on_session_response(const protocol::SessionResponse& msg);
    void on_assign_role(const Bytes& body);
    void on_round_start(const protocol::RoundStartMsg& msg);
    void on_topology(const std::string& text);
    void on_session_status(const protocol::SessionStatusMsg& msg);
    void on_global_update(const protocol::ModelUpdateFrame& frame);
    void on_force_aggregate(const protocol::ForceAggregateMsg& msg);
    void on_aggregation_input(const protocol::ModelUpdateFrame& frame);

    // Arms the aggregation window for the round and applies buffered inputs.
    void arm_aggregation(SessionCtx& ctx, std::uint32_t round);
    // Must be called with the lock held; returns the inputs to aggregate when
    // the window just completed (expected count reached or forced).
    std::optional<std::vector<protocol::ModelUpdateFrame>> try_complete(SessionCtx& ctx,
                                                                        bool force);
    void fire_aggregation(FirePlan plan);
    void report_error(const std::string& session_id, const std::string& kind,
                      const std::string& detail);
    void send_readiness(const std::string& session_id, std::uint32_t round,
                        std::vector<std::string> missing, std::optional<double> loss,
                        std::optional<double> accuracy);
    void log(const std::string& line) const;

    transport::Broker& broker_;
    std::string client_id_;
    ClientOptions options_;
    const Clock& clock_;
    fleet::Endpoint endpoint_;

    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::map<std::string, SessionCtx> sessions_;
    std::optional<ClientStats> stats_override_;
    std::function<void(const AggregationMetrics&)> aggregation_observer_;
};

// Reads host memory and CPU pressure; falls back to conservative defaults with
// the degraded flag when the probe fails. Bandwidth comes from the meter.
ClientStats probe_host_stats(const std::string& client_id, const fleet::TransferMeter& meter);

} // namespace sdflmq::client
