#include "sdflmq/coordinator/coordinator.hpp"

#include <algorithm>
#include <iostream>

#include "sdflmq/errors.hpp"

namespace sdflmq::coord {

namespace {

bool is_terminal(SessionState state) {
    return state == SessionState::kTerminated || state == SessionState::kAborted;
}

} // namespace

std::string to_string(SessionState state) {
    switch (state) {
    case SessionState::kCreated: return "CREATED";
    case SessionState::kWaiting: return "WAITING";
    case SessionState::kClustering: return "CLUSTERING";
    case SessionState::kActive: return "ACTIVE";
    case SessionState::kTerminated: return "TERMINATED";
    case SessionState::kAborted: return "ABORTED";
    }
    return "?";
}

Coordinator::Coordinator(transport::Broker& broker, CoordinatorOptions options, const Clock& clock)
    : broker_(broker),
      options_(std::move(options)),
      clock_(clock),
      endpoint_(broker, "coordinator", protocol::coordinator_base(), {}, clock) {
    endpoint_.bind_function(protocol::kFnCreateSession,
                            [this](const std::string&, const Bytes& body) {
                                handle_create(protocol::decode_message<
                                              protocol::CreateSessionRequest>(body));
                            });
    endpoint_.bind_function(protocol::kFnJoinSession,
                            [this](const std::string&, const Bytes& body) {
                                handle_join(
                                    protocol::decode_message<protocol::JoinSessionRequest>(body));
                            });
    endpoint_.bind_function(protocol::kFnClientReady,
                            [this](const std::string&, const Bytes& body) {
                                record_readiness(
                                    protocol::decode_message<protocol::ReadinessMsg>(body));
                            });
    endpoint_.bind_function(protocol::kFnDeregister,
                            [this](const std::string&, const Bytes& body) {
                                handle_deregister(
                                    protocol::decode_message<protocol::DeregisterMsg>(body));
                            });
    endpoint_.bind_function(protocol::kFnClientError,
                            [this](const std::string& sender, const Bytes& body) {
                                auto msg = protocol::decode_message<protocol::ClientErrorMsg>(body);
                                log("client error from " + sender + " in session " +
                                    msg.session_id + ": " + msg.kind + " (" + msg.detail + ")");
                            });
}

Coordinator::~Coordinator() = default;

void Coordinator::log(const std::string& line) const {
    if (options_.log) {
        options_.log(line);
    } else {
        std::cerr << "[coordinator] " << line << '\n';
    }
}

void Coordinator::transition(Session& session, SessionState next) {
    session.state = next;
    session.history.push_back(next);
}

void Coordinator::emit(const std::vector<SessionEvent>& events) {
    if (!options_.on_event) {
        return;
    }
    for (const auto& event : events) {
        options_.on_event(event);
    }
}

void Coordinator::send_all(Outbox& outbox) {
    for (auto& msg : outbox) {
        try {
            endpoint_.call_remote(msg.target_base, msg.function, msg.body);
        } catch (const Error& e) {
            log("send of " + msg.function + " to " + msg.target_base + " failed: " + e.what());
            if (!msg.member_id.empty() && !msg.session_id.empty()) {
                std::lock_guard lock(mutex_);
                auto it = sessions_.find(msg.session_id);
                if (it != sessions_.end()) {
                    std::vector<SessionEvent> ignored;
                    strike(msg.session_id, it->second, msg.member_id, ignored);
                }
            }
        }
    }
    outbox.clear();
}

std::map<std::string, PreferredRole> Coordinator::member_preferences(
    const Session& session) const {
    std::map<std::string, PreferredRole> preferences;
    for (const auto& [id, info] : session.members) {
        preferences.emplace(id, info.preferred);
    }
    return preferences;
}

bool Coordinator::all_ready(const Session& session) const {
    // A member flagged suspect this round does not hold the round open;
    // otherwise one dead trainer would deadlock the session.
    const std::uint32_t round = session.rounds_completed + 1;
    return std::all_of(session.members.begin(), session.members.end(),
                       [round](const auto& entry) {
                           return entry.second.ready ||
                                  entry.second.last_strike_round == round;
                       });
}

protocol::RoleAssignmentMsg Coordinator::assignment_for(const std::string& session_id,
                                                        const ClusterTopology& topology,
                                                        const std::string& client_id,
                                                        std::uint32_t round) const {
    const NodeAssignment& node = topology.nodes.at(client_id);
    protocol::RoleAssignmentMsg msg;
    msg.session_id = session_id;
    msg.round = round;
    msg.role = to_string(node.role);
    msg.layer = node.layer;
    msg.expected_inputs = node.expected_inputs;
    if (node.parent.has_value()) {
        msg.parent_base = protocol::aggregation_base(session_id, *node.parent);
        msg.parent_function = protocol::kFnModelUpdate;
    } else {
        // The root publishes its result on the parameter server's public topic.
        msg.parent_base = protocol::global_base(session_id);
        msg.parent_function = protocol::kFnGlobalModel;
    }
    if (node.role != Role::kTrainer) {
        msg.inbox_base = protocol::aggregation_base(session_id, client_id);
        msg.children = topology.children_of(client_id);
    }
    return msg;
}

void Coordinator::queue_assignments(const std::string& session_id, Session& session,
                                    const std::vector<RoleChange>& delta, std::uint32_t round,
                                    Outbox& outbox) {
    for (const auto& change : delta) {
        protocol::RoleAssignmentMsg msg;
        if (change.new_assignment.has_value()) {
            msg = assignment_for(session_id, session.topology, change.client_id, round);
        } else {
            msg.session_id = session_id;
            msg.round = round;
            msg.released = true;
        }
        outbox.push_back({protocol::client_base(change.client_id), protocol::kFnAssignRole,
                          protocol::encode_message(msg), change.client_id, session_id});
    }
}

void Coordinator::start_clustering(const std::string& session_id, Session& session, TimePoint now,
                                   Outbox& outbox, std::vector<SessionEvent>& events) {
    transition(session, SessionState::kClustering);
    session.topology =
        build_clusters(session_id, member_preferences(session), options_.clustering);
    events.push_back({session_id, SessionEventKind::kClustered, 1,
                      std::to_string(session.members.size()) + " members"});

    // Every member gets its private assignment, then the full topology goes out
    // on the session topic.
    for (const auto& [id, info] : session.members) {
        outbox.push_back({protocol::client_base(id), protocol::kFnAssignRole,
                          protocol::encode_message(
                              assignment_for(session_id, session.topology, id, 1)),
                          id, session_id});
    }
    outbox.push_back({protocol::session_base(session_id), protocol::kFnTopology,
                      to_bytes(session.topology.to_json_string()), "", session_id});

    transition(session, SessionState::kActive);
    broadcast_round_start(session_id, session, now, outbox, events);
}

void Coordinator::broadcast_round_start(const std::string& session_id, Session& session,
                                        TimePoint now, Outbox& outbox,
                                        std::vector<SessionEvent>& events) {
    const std::uint32_t round = session.rounds_completed + 1;
    session.round_started_at = now;
    session.force_sent = false;
    for (auto& [id, info] : session.members) {
        info.ready = false;
    }
    outbox.push_back({protocol::session_base(session_id), protocol::kFnRoundStart,
                      protocol::encode_message(protocol::RoundStartMsg{session_id, round}), "",
                      session_id});
    events.push_back({session_id, SessionEventKind::kRoundStarted, round, ""});
}

void Coordinator::terminate(const std::string& session_id, Session& session,
                            SessionState terminal, Outbox& outbox,
                            std::vector<SessionEvent>& events) {
    transition(session, terminal);
    outbox.push_back(
        {protocol::session_base(session_id), protocol::kFnSessionStatus,
         protocol::encode_message(protocol::SessionStatusMsg{session_id, to_string(terminal),
                                                             session.rounds_completed}),
         "", session_id});
    events.push_back({session_id,
                      terminal == SessionState::kTerminated ? SessionEventKind::kTerminated
                                                            : SessionEventKind::kAborted,
                      session.rounds_completed, ""});
}

void Coordinator::strike(const std::string& session_id, Session& session,
                         const std::string& member_id, std::vector<SessionEvent>& events) {
    auto it = session.members.find(member_id);
    if (it == session.members.end()) {
        return;
    }
    const std::uint32_t round = session.rounds_completed + 1;
    if (it->second.last_strike_round == round) {
        return; // at most one strike per member per round
    }
    it->second.last_strike_round = round;
    if (++it->second.strikes >= 2) {
        log("demoting " + member_id + " from session " + session_id +
            " after two consecutive strikes");
        session.members.erase(it);
        events.push_back({session_id, SessionEventKind::kMemberDemoted, round, member_id});
    }
}

void Coordinator::complete_round(const std::string& session_id, Session& session, TimePoint now,
                                 Outbox& outbox, std::vector<SessionEvent>& events) {
    session.rounds_completed += 1;
    events.push_back({session_id, SessionEventKind::kRoundCompleted, session.rounds_completed, ""});

    if (session.rounds_completed >= session.request.fl_rounds) {
        terminate(session_id, session, SessionState::kTerminated, outbox, events);
        return;
    }

    std::map<std::string, ClientStats> stats;
    for (const auto& [id, info] : session.members) {
        if (info.stats.has_value()) {
            stats.emplace(id, *info.stats);
        }
    }
    ClusterTopology next = optimize_roles(session.topology, member_preferences(session), stats,
                                          options_.optimizer, options_.clustering);
    const auto delta = compute_role_delta(session.topology, next);
    const bool structure_changed = !(next == session.topology);
    session.topology = std::move(next);
    if (!delta.empty()) {
        // Re-arrangement informs only the clients whose assignment changed.
        queue_assignments(session_id, session, delta, session.rounds_completed + 1, outbox);
    }
    if (structure_changed) {
        // Heads whose child set changed without their own assignment changing
        // learn it from the refreshed session-topic topology.
        outbox.push_back({protocol::session_base(session_id), protocol::kFnTopology,
                          to_bytes(session.topology.to_json_string()), "", session_id});
    }
    broadcast_round_start(session_id, session, now, outbox, events);
}

protocol::SessionResponse Coordinator::handle_create(
    const protocol::CreateSessionRequest& request) {
    Outbox outbox;
    protocol::SessionResponse response;
    response.session_id = request.session_id;
    response.request = "create";
    std::vector<SessionEvent> events;
    {
        std::lock_guard lock(mutex_);
        const TimePoint now = clock_.now();
        auto it = sessions_.find(request.session_id);
        const bool live = it != sessions_.end() && !is_terminal(it->second.state);
        if (live) {
            // First create wins; the competing request is dumped.
            response.accepted = false;
            response.reason = "session id already live";
        } else if (request.capacity_min == 0 || request.capacity_min > request.capacity_max) {
            response.accepted = false;
            response.reason = "capacity_min must be in [1, capacity_max]";
        } else if (request.fl_rounds == 0) {
            response.accepted = false;
            response.reason = "fl_rounds must be >= 1";
        } else if (request.session_time_ms == 0 || request.waiting_time_ms == 0) {
            response.accepted = false;
            response.reason = "session_time and waiting_time must be positive";
        } else {
            Session session;
            session.request = request;
            session.created_at = now;
            session.waiting_deadline = now + std::chrono::milliseconds(request.waiting_time_ms);
            session.session_deadline = now + std::chrono::milliseconds(request.session_time_ms);
            session.members[request.client_id] =
                MemberInfo{preferred_role_from_string(request.preferred_role)};
            transition(session, SessionState::kWaiting);
            auto [inserted, ok] =
                sessions_.insert_or_assign(request.session_id, std::move(session));
            response.accepted = true;
            response.state = to_string(SessionState::kWaiting);
            if (request.capacity_max == 1) {
                start_clustering(request.session_id, inserted->second, now, outbox, events);
            }
        }
        Outbox reply;
        reply.push_back({protocol::client_base(request.client_id), protocol::kFnSessionResponse,
                         protocol::encode_message(response), "", request.session_id});
        reply.insert(reply.end(), std::make_move_iterator(outbox.begin()),
                     std::make_move_iterator(outbox.end()));
        outbox = std::move(reply);
    }
    emit(events);
    send_all(outbox);
    return response;
}

protocol::SessionResponse Coordinator::handle_join(const protocol::JoinSessionRequest& request) {
    Outbox outbox;
    protocol::SessionResponse response;
    response.session_id = request.session_id;
    response.request = "join";
    std::vector<SessionEvent> events;
    {
        std::lock_guard lock(mutex_);
        const TimePoint now = clock_.now();
        auto it = sessions_.find(request.session_id);
        if (it == sessions_.end() || is_terminal(it->second.state)) {
            response.accepted = false;
            response.reason = "unknown session";
        } else if (it->second.state != SessionState::kWaiting) {
            response.accepted = false;
            response.reason = "session full";
        } else if (it->second.request.model_name != request.model_name) {
            response.accepted = false;
            response.reason = "model mismatch";
        } else if (it->second.members.size() >= it->second.request.capacity_max &&
                   !it->second.members.contains(request.client_id)) {
            response.accepted = false;
            response.reason = "session full";
        } else {
            Session& session = it->second;
            session.members[request.client_id] =
                MemberInfo{preferred_role_from_string(request.preferred_role)};
            response.accepted = true;
            response.state = to_string(session.state);
            if (session.members.size() >= session.request.capacity_max) {
                start_clustering(request.session_id, session, now, outbox, events);
            }
        }
        Outbox reply;
        reply.push_back({protocol::client_base(request.client_id), protocol::kFnSessionResponse,
                         protocol::encode_message(response), "", request.session_id});
        reply.insert(reply.end(), std::make_move_iterator(outbox.begin()),
                     std::make_move_iterator(outbox.end()));
        outbox = std::move(reply);
    }
    emit(events);
    send_all(outbox);
    return response;
}

bool Coordinator::record_readiness(const protocol::ReadinessMsg& msg) {
    std::vector<SessionEvent> events;
    bool complete = false;
    {
        std::lock_guard lock(mutex_);
        auto it = sessions_.find(msg.session_id);
        if (it == sessions_.end() || it->second.state != SessionState::kActive) {
            log("readiness for inactive session " + msg.session_id + " ignored");
            return false;
        }
        Session& session = it->second;
        if (msg.round != session.rounds_completed + 1) {
            log("stale readiness (round " + std::to_string(msg.round) + ") from " +
                msg.client_id);
            return false;
        }
        auto member = session.members.find(msg.client_id);
        if (member == session.members.end()) {
            log("readiness from unknown member " + msg.client_id + " ignored");
            return false;
        }
        member->second.ready = true;
        member->second.strikes = 0;
        try {
            member->second.stats = stats_from_json(msg.stats_json);
        } catch (const ParseError& e) {
            log(std::string("discarding malformed stats from ") + msg.client_id + ": " +
                e.what());
        }
        for (const auto& missing : msg.missing) {
            // A head reported this child as a straggler.
            strike(msg.session_id, session, missing, events);
        }
        complete = all_ready(session);
    }
    emit(events);
    return complete;
}

void Coordinator::handle_deregister(const protocol::DeregisterMsg& msg) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(msg.session_id);
    if (it == sessions_.end()) {
        return;
    }
    if (it->second.members.erase(msg.client_id) > 0) {
        log(msg.client_id + " left session " + msg.session_id +
            (msg.reason.empty() ? "" : " (" + msg.reason + ")"));
    }
}

std::vector<SessionEvent> Coordinator::tick() {
    Outbox outbox;
    std::vector<SessionEvent> events;
    {
        std::lock_guard lock(mutex_);
        const TimePoint now = clock_.now();
        for (auto& [session_id, session] : sessions_) {
            switch (session.state) {
            case SessionState::kWaiting:
                if (now >= session.waiting_deadline) {
                    if (session.members.size() >= session.request.capacity_min) {
                        start_clustering(session_id, session, now, outbox, events);
                    } else {
                        terminate(session_id, session, SessionState::kAborted, outbox, events);
                    }
                }
                break;
            case SessionState::kActive: {
                if (now >= session.session_deadline) {
                    terminate(session_id, session, SessionState::kTerminated, outbox, events);
                    break;
                }
                if (session.members.empty()) {
                    terminate(session_id, session, SessionState::kTerminated, outbox, events);
                    break;
                }
                if (all_ready(session)) {
                    complete_round(session_id, session, now, outbox, events);
                    break;
                }
                if (!session.force_sent &&
                    now >= session.round_started_at + options_.straggler_timeout) {
                    session.force_sent = true;
                    const std::uint32_t round = session.rounds_completed + 1;
                    std::vector<std::string> unready;
                    for (const auto& [id, info] : session.members) {
                        if (!info.ready) {
                            unready.push_back(id);
                        }
                    }
                    for (const auto& id : unready) {
                        if (session.topology.is_head(id)) {
                            // Tell the head to aggregate what it has.
                            outbox.push_back(
                                {protocol::client_base(id), protocol::kFnForceAggregate,
                                 protocol::encode_message(
                                     protocol::ForceAggregateMsg{session_id, round}),
                                 id, session_id});
                            events.push_back(
                                {session_id, SessionEventKind::kForcedAggregation, round, id});
                        }
                        strike(session_id, session, id, events);
                    }
                }
                break;
            }
            default:
                break;
            }
        }
    }
    emit(events);
    send_all(outbox);
    return events;
}

void Coordinator::shutdown_sessions() {
    Outbox outbox;
    std::vector<SessionEvent> events;
    {
        std::lock_guard lock(mutex_);
        for (auto& [session_id, session] : sessions_) {
            if (!is_terminal(session.state)) {
                terminate(session_id, session, SessionState::kTerminated, outbox, events);
            }
        }
    }
    emit(events);
    send_all(outbox);
}

std::optional<SessionInfo> Coordinator::session_info(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        return std::nullopt;
    }
    const Session& session = it->second;
    SessionInfo info;
    info.state = session.state;
    info.model_name = session.request.model_name;
    info.owner = session.request.client_id;
    info.capacity_min = session.request.capacity_min;
    info.capacity_max = session.request.capacity_max;
    info.fl_rounds = session.request.fl_rounds;
    info.rounds_completed = session.rounds_completed;
    for (const auto& [id, member] : session.members) {
        info.members.push_back(id);
    }
    info.state_history = session.history;
    return info;
}

std::optional<ClusterTopology> Coordinator::session_topology(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end() || it->second.topology.nodes.empty()) {
        return std::nullopt;
    }
    return it->second.topology;
}

} // namespace sdflmq::coord
