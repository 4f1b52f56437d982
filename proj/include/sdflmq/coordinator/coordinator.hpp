#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sdflmq/clock.hpp"
#include "sdflmq/coordinator/policies.hpp"
#include "sdflmq/coordinator/topology.hpp"
#include "sdflmq/fleet/endpoint.hpp"
#include "sdflmq/protocol.hpp"
#include "sdflmq/stats.hpp"
#include "sdflmq/transport/broker.hpp"

namespace sdflmq::coord {

enum class SessionState {
    kCreated,
    kWaiting,
    kClustering,
    kActive,
    kTerminated,
    kAborted,
};

std::string to_string(SessionState state);

enum class SessionEventKind {
    kClustered,
    kRoundStarted,
    kRoundCompleted,
    kTerminated,
    kAborted,
    kMemberDemoted,
    kForcedAggregation,
};

struct SessionEvent {
    std::string session_id;
    SessionEventKind kind;
    std::uint32_t round = 0; // 1-based round index the event refers to
    std::string detail;
};

struct CoordinatorOptions {
    ClusteringPolicy clustering = ClusteringPolicy::hierarchical();
    std::string optimizer = "static";
    std::chrono::milliseconds straggler_timeout{120000};
    std::function<void(const std::string&)> log; // default: stderr
    // Invoked (without internal locks, before the follow-up traffic goes out)
    // for every event, whichever entry point produced it.
    std::function<void(const SessionEvent&)> on_event;
};

// Read-only snapshot for tests and the harness.
struct SessionInfo {
    SessionState state = SessionState::kCreated;
    std::string model_name;
    std::string owner;
    std::uint32_t capacity_min = 0;
    std::uint32_t capacity_max = 0;
    std::uint32_t fl_rounds = 0;
    std::uint32_t rounds_completed = 0;
    std::vector<std::string> members;
    std::vector<SessionState> state_history;
};

// Single logical authority for session lifecycle, clustering, role
// (re)arrangement and per-round status. All state mutations run under one
// lock (the serialized event loop); messages are sent after it is released.
class Coordinator {
public:
    Coordinator(transport::Broker& broker, CoordinatorOptions options = {},
                const Clock& clock = SteadyClock::instance());
    ~Coordinator();

    Coordinator(const Coordinator&) = delete;
    Coordinator& operator=(const Coordinator&) = delete;

    // Message entry points. The fleet bindings call these; tests may call them
    // directly. Each sends its own follow-up traffic before returning.
    protocol::SessionResponse handle_create(const protocol::CreateSessionRequest& request);
    protocol::SessionResponse handle_join(const protocol::JoinSessionRequest& request);
    // Returns true when this report completed the round (all members ready).
    bool record_readiness(const protocol::ReadinessMsg& msg);
    void handle_deregister(const protocol::DeregisterMsg& msg);

    // Drives waiting-time expiry, straggler handling, round completion and
    // session termination. Call it periodically; tests drive it with a
    // ManualClock.
    std::vector<SessionEvent> tick();

    // Marks every live session TERMINATED and broadcasts the status.
    void shutdown_sessions();

    std::optional<SessionInfo> session_info(const std::string& session_id) const;
    std::optional<ClusterTopology> session_topology(const std::string& session_id) const;

private:
    struct MemberInfo {
        PreferredRole preferred = PreferredRole::kTrainerAggregator;
        std::optional<ClientStats> stats;
        bool ready = false;
        int strikes = 0;
        std::uint32_t last_strike_round = 0;
    };

    struct Session {
        protocol::CreateSessionRequest request;
        SessionState state = SessionState::kCreated;
        std::vector<SessionState> history{SessionState::kCreated};
        TimePoint created_at{};
        TimePoint waiting_deadline{};
        TimePoint session_deadline{};
        std::uint32_t rounds_completed = 0;
        TimePoint round_started_at{};
        bool force_sent = false;
        std::map<std::string, MemberInfo> members;
        ClusterTopology topology;
    };

    struct OutboundMessage {
        std::string target_base;
        std::string function;
        Bytes body;
        std::string member_id; // non-empty: strike this member if the send fails
        std::string session_id;
    };

    using Outbox = std::vector<OutboundMessage>;

    void transition(Session& session, SessionState next);
    void start_clustering(const std::string& session_id, Session& session, TimePoint now,
                          Outbox& outbox, std::vector<SessionEvent>& events);
    void broadcast_round_start(const std::string& session_id, Session& session, TimePoint now,
                               Outbox& outbox, std::vector<SessionEvent>& events);
    void complete_round(const std::string& session_id, Session& session, TimePoint now,
                        Outbox& outbox, std::vector<SessionEvent>& events);
    void terminate(const std::string& session_id, Session& session, SessionState terminal,
                   Outbox& outbox, std::vector<SessionEvent>& events);
    void strike(const std::string& session_id, Session& session, const std::string& member_id,
                std::vector<SessionEvent>& events);
    protocol::RoleAssignmentMsg assignment_for(const std::string& session_id,
                                               const ClusterTopology& topology,
                                               const std::string& client_id,
                                               std::uint32_t round) const;
    void queue_assignments(const std::string& session_id, Session& session,
                           const std::vector<RoleChange>& delta, std::uint32_t round,
                           Outbox& outbox);
    void send_all(Outbox& outbox);
    void emit(const std::vector<SessionEvent>& events);
    bool all_ready(const Session& session) const;
    std::map<std::string, PreferredRole> member_preferences(const Session& session) const;
    void log(const std::string& line) const;

    transport::Broker& broker_;
    CoordinatorOptions options_;
    const Clock& clock_;
    fleet::Endpoint endpoint_;

    mutable std::mutex mutex_;
    std::map<std::string, Session> sessions_;
};

} // namespace sdflmq::coord
