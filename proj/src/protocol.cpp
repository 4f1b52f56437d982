#include "sdflmq/protocol.hpp"

#include <cstring>

#include <json.hpp>

#include "sdflmq/errors.hpp"

namespace sdflmq::protocol {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'M', 'U'};
constexpr std::uint8_t kVersion = 1;

void append_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

void append_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

std::uint32_t read_u32(BytesView data, std::size_t& pos) {
    if (data.size() - pos < 4) {
        throw ParseError("model-update frame truncated");
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    }
    pos += 4;
    return v;
}

std::uint64_t read_u64(BytesView data, std::size_t& pos) {
    if (data.size() - pos < 8) {
        throw ParseError("model-update frame truncated");
    }
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
    }
    pos += 8;
    return v;
}

} // namespace

Bytes encode_model_update(const ModelUpdateFrame& frame) {
    nlohmann::json header = {
        {"session_id", frame.session_id},
        {"round", frame.round},
        {"sender", frame.sender_id},
        {"weight", frame.weight},
    };
    const std::string header_text = header.dump();
    const Bytes blob = model::serialize_params(frame.params);

    Bytes out;
    out.reserve(4 + 1 + 4 + header_text.size() + 8 + blob.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    out.push_back(kVersion);
    append_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out.insert(out.end(), header_text.begin(), header_text.end());
    append_u64(out, blob.size());
    out.insert(out.end(), blob.begin(), blob.end());
    return out;
}

ModelUpdateFrame decode_model_update(BytesView bytes) {
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw ParseError("not a model-update frame");
    }
    if (bytes[4] != kVersion) {
        throw ParseError("unsupported model-update frame version");
    }
    std::size_t pos = 5;
    const std::uint32_t header_len = read_u32(bytes, pos);
    if (bytes.size() - pos < header_len) {
        throw ParseError("model-update frame truncated");
    }
    std::string header_text(reinterpret_cast<const char*>(bytes.data() + pos), header_len);
    pos += header_len;

    ModelUpdateFrame frame;
    try {
        auto header = nlohmann::json::parse(header_text);
        frame.session_id = header.at("session_id").get<std::string>();
        frame.round = header.at("round").get<std::uint32_t>();
        frame.sender_id = header.at("sender").get<std::string>();
        frame.weight = header.at("weight").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad model-update header: ") + e.what());
    }

    const std::uint64_t blob_len = read_u64(bytes, pos);
    if (bytes.size() - pos != blob_len) {
        throw ParseError("model-update blob length mismatch");
    }
    frame.params = model::deserialize_params(bytes.subspan(pos));
    return frame;
}

namespace {

Bytes dump(const nlohmann::json& doc) {
    const std::string text = doc.dump();
    return Bytes(text.begin(), text.end());
}

nlohmann::json parse(BytesView bytes) {
    try {
        return nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad JSON message: ") + e.what());
    }
}

template <typename Fn>
auto guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad JSON message: ") + e.what());
    }
}

} // namespace

Bytes encode_message(const CreateSessionRequest& m) {
    return dump({{"client_id", m.client_id},
                 {"session_id", m.session_id},
                 {"model_name", m.model_name},
                 {"session_time_ms", m.session_time_ms},
                 {"waiting_time_ms", m.waiting_time_ms},
                 {"capacity_min", m.capacity_min},
                 {"capacity_max", m.capacity_max},
                 {"fl_rounds", m.fl_rounds},
                 {"preferred_role", m.preferred_role}});
}

template <>
CreateSessionRequest decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        CreateSessionRequest m;
        m.client_id = doc.at("client_id").get<std::string>();
        m.session_id = doc.at("session_id").get<std::string>();
        m.model_name = doc.at("model_name").get<std::string>();
        m.session_time_ms = doc.at("session_time_ms").get<std::uint64_t>();
        m.waiting_time_ms = doc.at("waiting_time_ms").get<std::uint64_t>();
        m.capacity_min = doc.at("capacity_min").get<std::uint32_t>();
        m.capacity_max = doc.at("capacity_max").get<std::uint32_t>();
        m.fl_rounds = doc.at("fl_rounds").get<std::uint32_t>();
        m.preferred_role = doc.at("preferred_role").get<std::string>();
        return m;
    });
}

Bytes encode_message(const JoinSessionRequest& m) {
    return dump({{"client_id", m.client_id},
                 {"session_id", m.session_id},
                 {"model_name", m.model_name},
                 {"fl_rounds", m.fl_rounds},
                 {"preferred_role", m.preferred_role}});
}

template <>
JoinSessionRequest decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        JoinSessionRequest m;
        m.client_id = doc.at("client_id").get<std::string>();
        m.session_id = doc.at("session_id").get<std::string>();
        m.model_name = doc.at("model_name").get<std::string>();
        m.fl_rounds = doc.at("fl_rounds").get<std::uint32_t>();
        m.preferred_role = doc.at("preferred_role").get<std::string>();
        return m;
    });
}

Bytes encode_message(const SessionResponse& m) {
    return dump({{"session_id", m.session_id},
                 {"request", m.request},
                 {"accepted", m.accepted},
                 {"reason", m.reason},
                 {"state", m.state}});
}

template <>
SessionResponse decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        SessionResponse m;
        m.session_id = doc.at("session_id").get<std::string>();
        m.request = doc.at("request").get<std::string>();
        m.accepted = doc.at("accepted").get<bool>();
        m.reason = doc.at("reason").get<std::string>();
        m.state = doc.at("state").get<std::string>();
        return m;
    });
}

Bytes encode_message(const RoleAssignmentMsg& m) {
    return dump({{"session_id", m.session_id},
                 {"round", m.round},
                 {"role", m.role},
                 {"parent_base", m.parent_base},
                 {"parent_function", m.parent_function},
                 {"inbox_base", m.inbox_base},
                 {"expected_inputs", m.expected_inputs},
                 {"children", m.children},
                 {"layer", m.layer},
                 {"released", m.released}});
}

template <>
RoleAssignmentMsg decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        RoleAssignmentMsg m;
        m.session_id = doc.at("session_id").get<std::string>();
        m.round = doc.at("round").get<std::uint32_t>();
        m.role = doc.at("role").get<std::string>();
        m.parent_base = doc.at("parent_base").get<std::string>();
        m.parent_function = doc.at("parent_function").get<std::string>();
        m.inbox_base = doc.at("inbox_base").get<std::string>();
        m.expected_inputs = doc.at("expected_inputs").get<std::uint32_t>();
        m.children = doc.at("children").get<std::vector<std::string>>();
        m.layer = doc.at("layer").get<std::uint32_t>();
        m.released = doc.at("released").get<bool>();
        return m;
    });
}

Bytes encode_message(const RoundStartMsg& m) {
    return dump({{"session_id", m.session_id}, {"round", m.round}});
}

template <>
RoundStartMsg decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        return RoundStartMsg{doc.at("session_id").get<std::string>(),
                             doc.at("round").get<std::uint32_t>()};
    });
}

Bytes encode_message(const SessionStatusMsg& m) {
    return dump({{"session_id", m.session_id},
                 {"state", m.state},
                 {"rounds_completed", m.rounds_completed}});
}

template <>
SessionStatusMsg decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        return SessionStatusMsg{doc.at("session_id").get<std::string>(),
                                doc.at("state").get<std::string>(),
                                doc.at("rounds_completed").get<std::uint32_t>()};
    });
}

Bytes encode_message(const ReadinessMsg& m) {
    return dump({{"client_id", m.client_id},
                 {"session_id", m.session_id},
                 {"round", m.round},
                 {"stats", nlohmann::json::parse(m.stats_json)},
                 {"missing", m.missing}});
}

template <>
ReadinessMsg decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        ReadinessMsg m;
        m.client_id = doc.at("client_id").get<std::string>();
        m.session_id = doc.at("session_id").get<std::string>();
        m.round = doc.at("round").get<std::uint32_t>();
        m.stats_json = doc.at("stats").dump();
        m.missing = doc.at("missing").get<std::vector<std::string>>();
        return m;
    });
}

Bytes encode_message(const ForceAggregateMsg& m) {
    return dump({{"session_id", m.session_id}, {"round", m.round}});
}

template <>
ForceAggregateMsg decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        return ForceAggregateMsg{doc.at("session_id").get<std::string>(),
                                 doc.at("round").get<std::uint32_t>()};
    });
}

Bytes encode_message(const DeregisterMsg& m) {
    return dump({{"client_id", m.client_id},
                 {"session_id", m.session_id},
                 {"reason", m.reason}});
}

template <>
DeregisterMsg decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        return DeregisterMsg{doc.at("client_id").get<std::string>(),
                             doc.at("session_id").get<std::string>(),
                             doc.at("reason").get<std::string>()};
    });
}

Bytes encode_message(const ClientErrorMsg& m) {
    return dump({{"client_id", m.client_id},
                 {"session_id", m.session_id},
                 {"kind", m.kind},
                 {"detail", m.detail}});
}

template <>
ClientErrorMsg decode_message(BytesView bytes) {
    auto doc = parse(bytes);
    return guarded([&] {
        return ClientErrorMsg{doc.at("client_id").get<std::string>(),
                              doc.at("session_id").get<std::string>(),
                              doc.at("kind").get<std::string>(),
                              doc.at("detail").get<std::string>()};
    });
}

} // namespace sdflmq::protocol
