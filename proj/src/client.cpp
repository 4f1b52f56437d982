#include "sdflmq/client/client.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "sdflmq/errors.hpp"

namespace sdflmq::client {

ClientStats probe_host_stats(const std::string& client_id, const fleet::TransferMeter& meter) {
    ClientStats stats;
    stats.client_id = client_id;
    stats.bandwidth = meter.rate();

    bool memory_ok = false;
    {
        std::ifstream meminfo("/proc/meminfo");
        std::string key;
        std::uint64_t value = 0;
        std::string unit;
        while (meminfo >> key >> value >> unit) {
            if (key == "MemAvailable:") {
                stats.free_memory = value * 1024;
                memory_ok = true;
                break;
            }
        }
    }
    if (!memory_ok) {
        stats.free_memory = 256ull * 1024 * 1024;
        stats.degraded = true;
    }

    bool cpu_ok = false;
    {
        std::ifstream loadavg("/proc/loadavg");
        double load1 = 0.0;
        if (loadavg >> load1) {
            const double cores = std::max(1u, std::thread::hardware_concurrency());
            stats.cpu_utilization = std::clamp(load1 / cores, 0.0, 1.0);
            cpu_ok = true;
        }
    }
    if (!cpu_ok) {
        stats.cpu_utilization = 1.0;
        stats.degraded = true;
    }
    return stats;
}

Client::Client(transport::Broker& broker, std::string client_id, ClientOptions options,
               const Clock& clock)
    : broker_(broker),
      client_id_(std::move(client_id)),
      options_(std::move(options)),
      clock_(clock),
      endpoint_(broker, client_id_, protocol::client_base(client_id_), options_.endpoint, clock) {
    endpoint_.bind_function(protocol::kFnSessionResponse,
                            [this](const std::string&, const Bytes& body) {
                                on_session_response(
                                    protocol::decode_message<protocol::SessionResponse>(body));
                            });
    endpoint_.bind_function(protocol::kFnAssignRole,
                            [this](const std::string&, const Bytes& body) { on_assign_role(body); });
    endpoint_.bind_function(protocol::kFnForceAggregate,
                            [this](const std::string&, const Bytes& body) {
                                on_force_aggregate(
                                    protocol::decode_message<protocol::ForceAggregateMsg>(body));
                            });
}

Client::~Client() = default;

void Client::log(const std::string& line) const {
    if (options_.log) {
        options_.log(line);
    } else {
        std::cerr << "[client " << client_id_ << "] " << line << '\n';
    }
}

void Client::unbind_session_topics(const std::string& session_id) {
    const std::string base = protocol::session_base(session_id);
    endpoint_.unbind_function_at(base, protocol::kFnTopology);
    endpoint_.unbind_function_at(base, protocol::kFnRoundStart);
    endpoint_.unbind_function_at(base, protocol::kFnSessionStatus);
    endpoint_.unbind_function_at(base, protocol::kFnGlobalUpdate);
}

void Client::bind_session_topics(const std::string& session_id) {
    const std::string base = protocol::session_base(session_id);
    endpoint_.bind_function_at(base, protocol::kFnTopology,
                               [this](const std::string&, const Bytes& body) {
                                   on_topology(to_string(body));
                               });
    endpoint_.bind_function_at(base, protocol::kFnRoundStart,
                               [this](const std::string&, const Bytes& body) {
                                   on_round_start(
                                       protocol::decode_message<protocol::RoundStartMsg>(body));
                               });
    endpoint_.bind_function_at(base, protocol::kFnSessionStatus,
                               [this](const std::string&, const Bytes& body) {
                                   on_session_status(
                                       protocol::decode_message<protocol::SessionStatusMsg>(body));
                               });
    endpoint_.bind_function_at(base, protocol::kFnGlobalUpdate,
                               [this](const std::string&, const Bytes& body) {
                                   on_global_update(protocol::decode_model_update(body));
                               });
}

protocol::SessionResponse Client::wait_response(const std::string& session_id, const char* verb) {
    std::unique_lock lock(mutex_);
    const bool got = cv_.wait_for(lock, options_.request_timeout, [&] {
        auto it = sessions_.find(session_id);
        return it != sessions_.end() && it->second.response.has_value();
    });
    if (!got) {
        sessions_.erase(session_id);
        throw ConnectivityError(std::string("coordinator did not answer ") + verb + " for '" +
                                session_id + "' in time");
    }
    protocol::SessionResponse response = *sessions_[session_id].response;
    sessions_[session_id].response.reset();
    if (!response.accepted) {
        sessions_.erase(session_id);
    }
    return response;
}

void Client::create_fl_session(const CreateSessionConfig& config) {
    {
        std::lock_guard lock(mutex_);
        if (sessions_.contains(config.session_id)) {
            throw StateError("already joined session " + config.session_id);
        }
        sessions_[config.session_id].model_name = config.model_name;
    }
    bind_session_topics(config.session_id);

    protocol::CreateSessionRequest request;
    request.client_id = client_id_;
    request.session_id = config.session_id;
    request.model_name = config.model_name;
    request.session_time_ms = static_cast<std::uint64_t>(config.session_time.count());
    request.waiting_time_ms = static_cast<std::uint64_t>(config.waiting_time.count());
    request.capacity_min = config.capacity_min;
    request.capacity_max = config.capacity_max;
    request.fl_rounds = config.fl_rounds;
    request.preferred_role = coord::to_string(config.preferred_role);
    endpoint_.call_remote(protocol::coordinator_base(), protocol::kFnCreateSession,
                          protocol::encode_message(request));

    try {
        const auto response = wait_response(config.session_id, "create");
        if (!response.accepted) {
            throw StateError("session create rejected: " + response.reason);
        }
    } catch (...) {
        unbind_session_topics(config.session_id);
        throw;
    }
}

void Client::join_fl_session(const JoinSessionConfig& config) {
    {
        std::lock_guard lock(mutex_);
        if (sessions_.contains(config.session_id)) {
            throw StateError("already joined session " + config.session_id);
        }
        sessions_[config.session_id].model_name = config.model_name;
    }
    bind_session_topics(config.session_id);

    protocol::JoinSessionRequest request;
    request.client_id = client_id_;
    request.session_id = config.session_id;
    request.model_name = config.model_name;
    request.fl_rounds = config.fl_rounds;
    request.preferred_role = coord::to_string(config.preferred_role);
    endpoint_.call_remote(protocol::coordinator_base(), protocol::kFnJoinSession,
                          protocol::encode_message(request));

    try {
        const auto response = wait_response(config.session_id, "join");
        if (!response.accepted) {
            throw StateError("session join rejected: " + response.reason);
        }
    } catch (...) {
        unbind_session_topics(config.session_id);
        throw;
    }
}

void Client::leave_session(const std::string& session_id, const std::string& reason) {
    endpoint_.call_remote(protocol::coordinator_base(), protocol::kFnDeregister,
                          protocol::encode_message(
                              protocol::DeregisterMsg{client_id_, session_id, reason}));
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it != sessions_.end()) {
        it->second.terminated = true;
        it->second.terminal_state = "LEFT";
    }
    cv_.notify_all();
}

void Client::set_model(const std::string& session_id, const model::ModelParameters& params,
                       std::uint64_t n_samples) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        throw StateError("unknown session: " + session_id);
    }
    SessionCtx& ctx = it->second;
    if (ctx.terminated) {
        throw SessionTerminatedError("session " + session_id + " is " + ctx.terminal_state);
    }
    if (ctx.schema.has_value() && !ctx.schema->same_schema(params)) {
        throw SchemaError("model schema differs from the session schema");
    }
    if (!ctx.schema.has_value()) {
        ctx.schema = params;
    }
    ctx.params = params;
    ctx.provenance = ModelProvenance::kLocal;
    ctx.n_samples = n_samples == 0 ? 1 : n_samples;
    cv_.notify_all();
}

void Client::set_local_metrics(const std::string& session_id, double loss, double accuracy) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        throw StateError("unknown session: " + session_id);
    }
    it->second.last_loss = loss;
    it->second.last_accuracy = accuracy;
}

model::ModelParameters Client::model(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end() || !it->second.params.has_value()) {
        throw StateError("no model for session: " + session_id);
    }
    return *it->second.params;
}

ModelProvenance Client::model_provenance(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end() || !it->second.params.has_value()) {
        throw StateError("no model for session: " + session_id);
    }
    return it->second.provenance;
}

std::uint32_t Client::wait_round_start(const std::string& session_id,
                                       std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    auto pred = [&] {
        auto it = sessions_.find(session_id);
        if (it == sessions_.end()) {
            return true; // surfaced below
        }
        const SessionCtx& ctx = it->second;
        return ctx.terminated ||
               (ctx.current_round >= 1 && ctx.current_round > ctx.last_global_round &&
                ctx.sent_round < ctx.current_round);
    };
    if (!cv_.wait_for(lock, timeout, pred)) {
        throw TimeoutError("round did not start within the timeout");
    }
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        throw StateError("unknown session: " + session_id);
    }
    if (it->second.terminated) {
        throw SessionTerminatedError("session " + session_id + " is " +
                                     it->second.terminal_state);
    }
    return it->second.current_round;
}

coord::Role Client::current_role(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end() || !it->second.role.has_value()) {
        throw StateError("no role assigned for session: " + session_id);
    }
    return it->second.role->role;
}

std::optional<RoleState> Client::role_state(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        return std::nullopt;
    }
    return it->second.role;
}

void Client::send_local(const std::string& session_id) {
    protocol::ModelUpdateFrame frame;
    bool self_aggregate = false;
    std::string parent_base;
    std::string parent_function;
    std::optional<FirePlan> plan;
    {
        std::unique_lock lock(mutex_);
        auto it = sessions_.find(session_id);
        if (it == sessions_.end()) {
            throw StateError("unknown session: " + session_id);
        }
        SessionCtx& ctx = it->second;
        if (ctx.terminated) {
            throw SessionTerminatedError("session " + session_id + " is " + ctx.terminal_state);
        }
        if (!ctx.params.has_value()) {
            throw StateError("no local model set for session: " + session_id);
        }
        const bool round_open = cv_.wait_for(lock, options_.straggler_timeout, [&] {
            return ctx.terminated ||
                   (ctx.role.has_value() && ctx.current_round >= 1 &&
                    ctx.sent_round < ctx.current_round &&
                    ctx.last_global_round + 1 == ctx.current_round);
        });
        if (ctx.terminated) {
            throw SessionTerminatedError("session " + session_id + " is " + ctx.terminal_state);
        }
        if (!round_open) {
            if (!ctx.role.has_value()) {
                throw StateError("no role assigned yet for session: " + session_id);
            }
            throw TimeoutError("round never opened for send_local");
        }
        const RoleState& role = *ctx.role;
        if (role.role == coord::Role::kAggregator) {
            throw StateError("aggregator-only role does not publish local updates");
        }
        ctx.sent_round = ctx.current_round;

        frame.session_id = session_id;
        frame.round = ctx.current_round;
        frame.sender_id = client_id_;
        frame.weight = static_cast<double>(ctx.n_samples);
        frame.params = *ctx.params;

        if (role.role == coord::Role::kTrainerAggregator) {
            // A trainer-aggregator's own update feeds its aggregation state
            // rather than the wire.
            self_aggregate = true;
            if (ctx.agg.armed && ctx.agg.round == frame.round && !ctx.agg.fired) {
                ctx.agg.received[client_id_] = frame;
                ctx.agg.own_added = true;
                auto inputs = try_complete(ctx, false);
                if (inputs.has_value()) {
                    plan = FirePlan{session_id, ctx.agg.round, role.layer, role.parent_base,
                                    role.parent_function, std::move(*inputs)};
                }
            } else {
                log("own update for round " + std::to_string(frame.round) +
                    " arrived outside the aggregation window");
            }
        } else {
            parent_base = role.parent_base;
            parent_function = role.parent_function;
        }
    }
    if (!self_aggregate) {
        endpoint_.call_remote(parent_base, parent_function, protocol::encode_model_update(frame));
    } else if (plan.has_value()) {
        fire_aggregation(std::move(*plan));
    }
}

model::ModelParameters Client::wait_global_update(const std::string& session_id,
                                                  std::chrono::milliseconds timeout) {
    model::ModelParameters result;
    std::uint32_t round = 0;
    bool need_readiness = false;
    std::vector<std::string> missing;
    std::optional<double> loss;
    std::optional<double> accuracy;
    {
        std::unique_lock lock(mutex_);
        auto it = sessions_.find(session_id);
        if (it == sessions_.end()) {
            throw StateError("unknown session: " + session_id);
        }
        SessionCtx& ctx = it->second;
        const bool got = cv_.wait_for(lock, timeout, [&] {
            return ctx.terminated ||
                   (ctx.current_round >= 1 && ctx.globals.contains(ctx.current_round));
        });
        if (ctx.terminated && !(ctx.current_round >= 1 &&
                                ctx.globals.contains(ctx.current_round))) {
            throw SessionTerminatedError("session " + session_id + " is " + ctx.terminal_state);
        }
        if (!got) {
            throw TimeoutError("no global update for session " + session_id +
                               " within the round timeout");
        }
        round = ctx.current_round;
        result = ctx.globals.at(round).params;
        ctx.last_global_round = round;
        if (ctx.readiness_round < round) {
            ctx.readiness_round = round;
            need_readiness = true;
            missing = std::move(ctx.last_missing);
            ctx.last_missing.clear();
            loss = ctx.last_loss;
            accuracy = ctx.last_accuracy;
        }
    }
    if (need_readiness) {
        send_readiness(session_id, round, std::move(missing), loss, accuracy);
    }
    return result;
}

void Client::send_readiness(const std::string& session_id, std::uint32_t round,
                            std::vector<std::string> missing, std::optional<double> loss,
                            std::optional<double> accuracy) {
    ClientStats stats = collect_stats();
    stats.last_loss = loss;
    stats.last_accuracy = accuracy;
    protocol::ReadinessMsg msg;
    msg.client_id = client_id_;
    msg.session_id = session_id;
    msg.round = round;
    msg.stats_json = stats_to_json(stats);
    msg.missing = std::move(missing);
    try {
        endpoint_.call_remote(protocol::coordinator_base(), protocol::kFnClientReady,
                              protocol::encode_message(msg));
    } catch (const Error& e) {
        log(std::string("readiness report failed: ") + e.what());
    }
}

void Client::report_error(const std::string& session_id, const std::string& kind,
                          const std::string& detail) {
    try {
        endpoint_.call_remote(protocol::coordinator_base(), protocol::kFnClientError,
                              protocol::encode_message(
                                  protocol::ClientErrorMsg{client_id_, session_id, kind, detail}));
    } catch (const Error& e) {
        log(std::string("error report failed: ") + e.what());
    }
}

void Client::on_session_response(const protocol::SessionResponse& msg) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(msg.session_id);
    if (it == sessions_.end()) {
        return;
    }
    it->second.response = msg;
    cv_.notify_all();
}

void Client::on_assign_role(const Bytes& body) {
    protocol::RoleAssignmentMsg msg;
    try {
        msg = protocol::decode_message<protocol::RoleAssignmentMsg>(body);
        if (!msg.released) {
            coord::role_from_string(msg.role); // validate early
        }
    } catch (const Error& e) {
        log(std::string("malformed role assignment: ") + e.what());
        report_error("", "protocol_error", std::string("bad assign_role: ") + e.what());
        return;
    }

    std::string unbind_base;
    std::string bind_base;
    {
        std::lock_guard lock(mutex_);
        auto it = sessions_.find(msg.session_id);
        if (it == sessions_.end()) {
            log("role assignment for unknown session " + msg.session_id);
            return;
        }
        SessionCtx& ctx = it->second;
        const std::string old_inbox = ctx.role.has_value() ? ctx.role->inbox_base : "";
        if (msg.released) {
            ctx.role.reset();
            ctx.agg = AggregationState{};
            unbind_base = old_inbox;
        } else {
            RoleState next;
            next.round = msg.round;
            next.role = coord::role_from_string(msg.role);
            next.parent_base = msg.parent_base;
            next.parent_function = msg.parent_function;
            next.inbox_base = msg.inbox_base;
            next.expected_inputs = msg.expected_inputs;
            next.children = msg.children;
            next.layer = msg.layer;
            if (ctx.role.has_value() && *ctx.role == next) {
                return; // replayed assignment, nothing to do
            }
            ctx.role = next;
            if (old_inbox != next.inbox_base) {
                unbind_base = old_inbox;
                bind_base = next.inbox_base;
            }
            if (next.inbox_base.empty()) {
                // Head became a trainer: pending aggregation state is dropped.
                ctx.agg = AggregationState{};
            }
        }
        cv_.notify_all();
    }
    if (!unbind_base.empty()) {
        endpoint_.unbind_function_at(unbind_base, protocol::kFnModelUpdate);
    }
    if (!bind_base.empty()) {
        endpoint_.bind_function_at(bind_base, protocol::kFnModelUpdate,
                                   [this](const std::string&, const Bytes& body) {
                                       on_aggregation_input(protocol::decode_model_update(body));
                                   });
    }
}

void Client::arm_aggregation(SessionCtx& ctx, std::uint32_t round) {
    ctx.agg = AggregationState{};
    ctx.agg.round = round;
    ctx.agg.armed = true;
    ctx.agg.deadline =
        clock_.now() + options_.straggler_timeout - options_.aggregation_margin;

    // The freshest children view wins: the broadcast topology covers heads
    // whose child set changed without their own assignment changing.
    std::vector<std::string> children;
    if (ctx.topology.nodes.contains(client_id_)) {
        children = ctx.topology.children_of(client_id_);
    } else if (ctx.role.has_value()) {
        children = ctx.role->children;
    }
    ctx.agg.allowed_senders = std::set<std::string>(children.begin(), children.end());

    auto pending = ctx.pending_inputs.find(round);
    if (pending != ctx.pending_inputs.end()) {
        for (auto& buffered : pending->second) {
            const auto& sender = buffered.frame.sender_id;
            if (!ctx.agg.allowed_senders.contains(sender)) {
                log("buffered input from non-child " + sender + " rejected");
                continue;
            }
            ctx.agg.received[sender] = std::move(buffered.frame);
        }
    }
    // Everything at or below this round is now either applied or stale.
    std::erase_if(ctx.pending_inputs, [round](const auto& entry) { return entry.first <= round; });
}

std::optional<std::vector<protocol::ModelUpdateFrame>> Client::try_complete(SessionCtx& ctx,
                                                                            bool force) {
    AggregationState& agg = ctx.agg;
    if (!agg.armed || agg.fired || !ctx.role.has_value()) {
        return std::nullopt;
    }
    const std::size_t expected = ctx.role->expected_inputs;
    const std::size_t have = agg.received.size();
    const bool complete = expected > 0 && have >= expected;
    if (!complete && !(force && have >= 1)) {
        return std::nullopt;
    }
    agg.fired = true;

    ctx.last_missing.clear();
    for (const auto& sender : agg.allowed_senders) {
        if (!agg.received.contains(sender)) {
            ctx.last_missing.push_back(sender);
        }
    }

    std::vector<protocol::ModelUpdateFrame> inputs;
    inputs.reserve(agg.received.size());
    for (auto& [sender, frame] : agg.received) {
        inputs.push_back(std::move(frame)); // map order: sorted by sender, deterministic
    }
    agg.received.clear();
    return inputs;
}

void Client::fire_aggregation(FirePlan plan) {
    std::function<void(const AggregationMetrics&)> observer;
    {
        std::lock_guard lock(mutex_);
        observer = aggregation_observer_;
    }

    const TimePoint start = clock_.now();
    std::vector<model::WeightedUpdate> updates;
    updates.reserve(plan.inputs.size());
    double total_weight = 0.0;
    for (auto& frame : plan.inputs) {
        total_weight += frame.weight;
        updates.push_back({std::move(frame.params), frame.weight});
    }
    protocol::ModelUpdateFrame out;
    try {
        out.params = model::fedavg(updates);
    } catch (const Error& e) {
        log(std::string("aggregation failed: ") + e.what());
        report_error(plan.session_id, "aggregation_error", e.what());
        return;
    }
    const TimePoint end = clock_.now();
    if (observer) {
        observer({plan.session_id, plan.round, plan.layer, end - start, updates.size()});
    }

    out.session_id = plan.session_id;
    out.round = plan.round;
    out.sender_id = client_id_;
    out.weight = total_weight;
    try {
        endpoint_.call_remote(plan.parent_base, plan.parent_function,
                              protocol::encode_model_update(out));
    } catch (const Error& e) {
        log(std::string("forwarding aggregate failed: ") + e.what());
    }
}

void Client::on_round_start(const protocol::RoundStartMsg& msg) {
    std::optional<FirePlan> plan;
    {
        std::lock_guard lock(mutex_);
        auto it = sessions_.find(msg.session_id);
        if (it == sessions_.end() || it->second.terminated) {
            return;
        }
        SessionCtx& ctx = it->second;
        if (msg.round <= ctx.current_round) {
            return; // replay
        }
        ctx.current_round = msg.round;
        if (ctx.role.has_value() && ctx.role->role != coord::Role::kTrainer) {
            arm_aggregation(ctx, msg.round);
            // A pure aggregator may already hold every child update.
            auto inputs = try_complete(ctx, false);
            if (inputs.has_value()) {
                plan = FirePlan{msg.session_id, ctx.agg.round, ctx.role->layer,
                                ctx.role->parent_base, ctx.role->parent_function,
                                std::move(*inputs)};
            }
        } else {
            std::erase_if(ctx.pending_inputs,
                          [&](const auto& entry) { return entry.first <= msg.round; });
        }
        cv_.notify_all();
    }
    if (plan.has_value()) {
        fire_aggregation(std::move(*plan));
    }
}

void Client::on_topology(const std::string& text) {
    coord::ClusterTopology topology;
    try {
        topology = coord::ClusterTopology::from_json_string(text);
    } catch (const Error& e) {
        log(std::string("bad topology broadcast: ") + e.what());
        return;
    }
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(topology.session_id);
    if (it != sessions_.end()) {
        it->second.topology = std::move(topology);
    }
}

void Client::on_session_status(const protocol::SessionStatusMsg& msg) {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(msg.session_id);
    if (it == sessions_.end()) {
        return;
    }
    if (msg.state == "TERMINATED" || msg.state == "ABORTED") {
        it->second.terminated = true;
        it->second.terminal_state = msg.state;
        cv_.notify_all();
    }
}

void Client::on_global_update(const protocol::ModelUpdateFrame& frame) {
    bool schema_mismatch = false;
    {
        std::lock_guard lock(mutex_);
        auto it = sessions_.find(frame.session_id);
        if (it == sessions_.end()) {
            return;
        }
        SessionCtx& ctx = it->second;
        if (ctx.schema.has_value() && !ctx.schema->same_schema(frame.params)) {
            schema_mismatch = true;
        } else {
            if (!ctx.schema.has_value()) {
                ctx.schema = frame.params;
            }
            ctx.globals[frame.round] = frame;
            while (ctx.globals.size() > 4) {
                ctx.globals.erase(ctx.globals.begin());
            }
            ctx.params = frame.params;
            ctx.provenance = ModelProvenance::kGlobal;
            cv_.notify_all();
        }
    }
    if (schema_mismatch) {
        log("global update with foreign schema dropped");
        report_error(frame.session_id, "protocol_error",
                     "global update schema differs from the session schema");
    }
}

void Client::on_force_aggregate(const protocol::ForceAggregateMsg& msg) {
    std::optional<FirePlan> plan;
    {
        std::lock_guard lock(mutex_);
        auto it = sessions_.find(msg.session_id);
        if (it == sessions_.end() || !it->second.role.has_value()) {
            return;
        }
        SessionCtx& ctx = it->second;
        if (!ctx.agg.armed || ctx.agg.round != msg.round || ctx.agg.fired) {
            return;
        }
        auto inputs = try_complete(ctx, true);
        if (inputs.has_value()) {
            plan = FirePlan{msg.session_id, ctx.agg.round, ctx.role->layer,
                            ctx.role->parent_base, ctx.role->parent_function, std::move(*inputs)};
        }
    }
    if (plan.has_value()) {
        fire_aggregation(std::move(*plan));
    }
}

void Client::on_aggregation_input(const protocol::ModelUpdateFrame& frame) {
    std::optional<FirePlan> plan;
    {
        std::lock_guard lock(mutex_);
        auto it = sessions_.find(frame.session_id);
        if (it == sessions_.end()) {
            log("aggregation input for unknown session " + frame.session_id);
            return;
        }
        SessionCtx& ctx = it->second;
        if (frame.round > ctx.current_round) {
            // Another branch is already in the next round; hold the update
            // until this head's round starts.
            ctx.pending_inputs[frame.round].push_back({frame});
            return;
        }
        if (!ctx.role.has_value() || ctx.role->role == coord::Role::kTrainer) {
            log("aggregation input from " + frame.sender_id + " but no head role held");
            return;
        }
        AggregationState& agg = ctx.agg;
        if (!agg.armed || agg.round != frame.round) {
            log("stale aggregation input for round " + std::to_string(frame.round));
            return;
        }
        if (agg.fired) {
            log("late aggregation input from " + frame.sender_id + " after the window fired");
            return;
        }
        if (!agg.allowed_senders.contains(frame.sender_id)) {
            log("input from non-child sender " + frame.sender_id + " rejected");
            return;
        }
        if (agg.received.contains(frame.sender_id)) {
            log("duplicate update from " + frame.sender_id + ", latest wins");
        }
        agg.received[frame.sender_id] = frame;
        auto inputs = try_complete(ctx, false);
        if (inputs.has_value()) {
            plan = FirePlan{frame.session_id, agg.round, ctx.role->layer, ctx.role->parent_base,
                            ctx.role->parent_function, std::move(*inputs)};
        }
    }
    if (plan.has_value()) {
        fire_aggregation(std::move(*plan));
    }
}

void Client::tick() {
    std::vector<FirePlan> plans;
    {
        std::lock_guard lock(mutex_);
        const TimePoint now = clock_.now();
        for (auto& [session_id, ctx] : sessions_) {
            if (!ctx.agg.armed || ctx.agg.fired || !ctx.role.has_value()) {
                continue;
            }
            if (now >= ctx.agg.deadline && !ctx.agg.received.empty()) {
                auto inputs = try_complete(ctx, true);
                if (inputs.has_value()) {
                    plans.push_back({session_id, ctx.agg.round, ctx.role->layer,
                                     ctx.role->parent_base, ctx.role->parent_function,
                                     std::move(*inputs)});
                }
            }
        }
    }
    for (auto& plan : plans) {
        fire_aggregation(std::move(plan));
    }
    for (const auto& drop : endpoint_.poll(clock_.now())) {
        log("reassembly evicted message " + drop.message_id.to_hex() + " from " + drop.sender_id +
            " (" + std::to_string(drop.received) + "/" + std::to_string(drop.expected) +
            " chunks)");
    }
}

ClientStats Client::collect_stats() {
    {
        std::lock_guard lock(mutex_);
        if (stats_override_.has_value()) {
            return *stats_override_;
        }
    }
    return probe_host_stats(client_id_, endpoint_.meter());
}

void Client::set_stats_override(const ClientStats& stats) {
    std::lock_guard lock(mutex_);
    stats_override_ = stats;
}

void Client::clear_stats_override() {
    std::lock_guard lock(mutex_);
    stats_override_.reset();
}

void Client::set_aggregation_observer(std::function<void(const AggregationMetrics&)> observer) {
    std::lock_guard lock(mutex_);
    aggregation_observer_ = std::move(observer);
}

} // namespace sdflmq::client
