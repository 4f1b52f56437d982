#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdflmq/bytes.hpp"
#include "sdflmq/model/parameters.hpp"

namespace sdflmq::protocol {

// Topic scheme shared by every module.
inline std::string coordinator_base() {
    return "sdflmq/coord";
}
inline std::string client_base(const std::string& client_id) {
    return "sdflmq/client/" + client_id;
}
inline std::string session_base(const std::string& session_id) {
    return "sdflmq/session/" + session_id;
}
inline std::string aggregation_base(const std::string& session_id, const std::string& head_id) {
    return "sdflmq/session/" + session_id + "/agg/" + head_id;
}
inline std::string global_base(const std::string& session_id) {
    return "sdflmq/global/" + session_id;
}

// Function names bound on the coordinator inbox.
inline constexpr const char* kFnCreateSession = "create_fl_session";
inline constexpr const char* kFnJoinSession = "join_fl_session";
inline constexpr const char* kFnClientReady = "client_ready";
inline constexpr const char* kFnDeregister = "deregister";
inline constexpr const char* kFnClientError = "client_error";

// Function names bound on client inboxes.
inline constexpr const char* kFnSessionResponse = "session_response";
inline constexpr const char* kFnAssignRole = "assign_role";
inline constexpr const char* kFnForceAggregate = "force_aggregate";

// Function names bound on session broadcast topics.
inline constexpr const char* kFnTopology = "topology";
inline constexpr const char* kFnRoundStart = "round_start";
inline constexpr const char* kFnSessionStatus = "session_status";
inline constexpr const char* kFnGlobalUpdate = "global_update";

// Function names bound on aggregation inboxes and the global topic.
inline constexpr const char* kFnModelUpdate = "model_update";
inline constexpr const char* kFnGlobalModel = "global_model";

// Binary frame that carries one weighted parameter blob between aggregation
// stages: "SDMU" magic, version byte, u32 JSON header length, JSON header
// {session_id, round, sender, weight}, u64 blob length, serialize_params blob.
struct ModelUpdateFrame {
    std::string session_id;
    std::uint32_t round = 0;
    std::string sender_id;
    double weight = 1.0;
    model::ModelParameters params;
};

Bytes encode_model_update(const ModelUpdateFrame& frame);
ModelUpdateFrame decode_model_update(BytesView bytes); // throws ParseError

// JSON message bodies. Field names are part of the wire contract and are
// documented in the README.

struct CreateSessionRequest {
    std::string client_id;
    std::string session_id;
    std::string model_name;
    std::uint64_t session_time_ms = 0;
    std::uint64_t waiting_time_ms = 0;
    std::uint32_t capacity_min = 1;
    std::uint32_t capacity_max = 1;
    std::uint32_t fl_rounds = 1;
    std::string preferred_role = "trainer_aggregator";
};

struct JoinSessionRequest {
    std::string client_id;
    std::string session_id;
    std::string model_name;
    std::uint32_t fl_rounds = 1;
    std::string preferred_role = "trainer_aggregator";
};

struct SessionResponse {
    std::string session_id;
    std::string request; // "create" | "join"
    bool accepted = false;
    std::string reason;
    std::string state;
};

struct RoleAssignmentMsg {
    std::string session_id;
    std::uint32_t round = 0;
    std::string role;
    std::string parent_base;     // where this client's result goes
    std::string parent_function; // model_update, or global_model for the root
    std::string inbox_base;      // heads only; empty for trainers
    std::uint32_t expected_inputs = 0;
    std::vector<std::string> children;
    std::uint32_t layer = 0;
    bool released = false; // true: the client no longer holds a role
};

struct RoundStartMsg {
    std::string session_id;
    std::uint32_t round = 0;
};

struct SessionStatusMsg {
    std::string session_id;
    std::string state;
    std::uint32_t rounds_completed = 0;
};

struct ReadinessMsg {
    std::string client_id;
    std::string session_id;
    std::uint32_t round = 0;
    std::string stats_json;
    std::vector<std::string> missing;
};

struct ForceAggregateMsg {
    std::string session_id;
    std::uint32_t round = 0;
};

struct DeregisterMsg {
    std::string client_id;
    std::string session_id;
    std::string reason;
};

struct ClientErrorMsg {
    std::string client_id;
    std::string session_id;
    std::string kind;
    std::string detail;
};

Bytes encode_message(const CreateSessionRequest& m);
Bytes encode_message(const JoinSessionRequest& m);
Bytes encode_message(const SessionResponse& m);
Bytes encode_message(const RoleAssignmentMsg& m);
Bytes encode_message(const RoundStartMsg& m);
Bytes encode_message(const SessionStatusMsg& m);
Bytes encode_message(const ReadinessMsg& m);
Bytes encode_message(const ForceAggregateMsg& m);
Bytes encode_message(const DeregisterMsg& m);
Bytes encode_message(const ClientErrorMsg& m);

// All decoders throw ParseError on malformed input.
template <typename T>
T decode_message(BytesView bytes);

} // namespace sdflmq::protocol
