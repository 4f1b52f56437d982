#include "sdflmq/paramserver/param_server.hpp"

#include <fstream>
#include <iostream>

#include "sdflmq/errors.hpp"

namespace sdflmq::pserver {

namespace {

void append_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

void append_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4)) {
        throw ParseError("persistence file truncated");
    }
    return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
           (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
}

} // namespace

ParamServer::ParamServer(transport::Broker& broker, ParamServerOptions options, const Clock& clock)
    : broker_(broker),
      options_(std::move(options)),
      clock_(clock),
      endpoint_(broker, "paramserver", protocol::global_base("+"), {}, clock) {
    endpoint_.bind_function_at(protocol::global_base("+"), protocol::kFnGlobalModel,
                               [this](const std::string&, const Bytes& body) {
                                   on_root_result(protocol::decode_model_update(body));
                               });
}

void ParamServer::log(const std::string& line) const {
    if (options_.log) {
        options_.log(line);
    } else {
        std::cerr << "[paramserver] " << line << '\n';
    }
}

void ParamServer::on_root_result(const protocol::ModelUpdateFrame& frame) {
    bool rebroadcast = false;
    {
        std::lock_guard lock(mutex_);
        auto& rounds = sessions_[frame.session_id];
        if (rounds.contains(frame.round)) {
            ++duplicates_;
            log("duplicate global model for " + frame.session_id + " round " +
                std::to_string(frame.round) + " ignored");
        } else {
            auto max_it = max_round_.find(frame.session_id);
            if (max_it != max_round_.end() && frame.round < max_it->second) {
                ++regressions_;
                log("round regression for " + frame.session_id + ": got " +
                    std::to_string(frame.round) + " after " + std::to_string(max_it->second));
            } else {
                rounds.emplace(frame.round, GlobalRecord{frame.round, frame.weight, frame.params,
                                                         clock_.now()});
                max_round_[frame.session_id] = frame.round;
                while (rounds.size() > options_.retention_rounds) {
                    rounds.erase(rounds.begin());
                }
                rebroadcast = true;
            }
        }
    }
    if (!rebroadcast) {
        return;
    }
    if (!options_.persist_path.empty()) {
        persist(frame.session_id, frame.round, frame.params);
    }
    protocol::ModelUpdateFrame out = frame;
    out.sender_id = "paramserver";
    endpoint_.call_remote(protocol::session_base(frame.session_id), protocol::kFnGlobalUpdate,
                          protocol::encode_model_update(out));
}

void ParamServer::persist(const std::string& session_id, std::uint32_t round,
                          const model::ModelParameters& params) {
    const Bytes blob = model::serialize_params(params);
    Bytes record;
    append_u16(record, static_cast<std::uint16_t>(session_id.size()));
    record.insert(record.end(), session_id.begin(), session_id.end());
    append_u32(record, round);
    record.insert(record.end(), blob.begin(), blob.end());

    Bytes framed;
    append_u32(framed, static_cast<std::uint32_t>(record.size()));
    framed.insert(framed.end(), record.begin(), record.end());

    std::ofstream out(options_.persist_path, std::ios::binary | std::ios::app);
    if (!out) {
        log("cannot open persistence file " + options_.persist_path);
        return;
    }
    out.write(reinterpret_cast<const char*>(framed.data()),
              static_cast<std::streamsize>(framed.size()));
}

std::vector<PersistedRecord> ParamServer::load_persisted(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open persistence file: " + path);
    }
    std::vector<PersistedRecord> records;
    while (in.peek() != std::char_traits<char>::eof()) {
        const std::uint32_t len = read_u32(in);
        Bytes record(len);
        if (!in.read(reinterpret_cast<char*>(record.data()), len)) {
            throw ParseError("persistence file truncated");
        }
        if (len < 6) {
            throw ParseError("persistence record too short");
        }
        const std::uint16_t sid_len = static_cast<std::uint16_t>(record[0]) |
                                      (static_cast<std::uint16_t>(record[1]) << 8);
        if (static_cast<std::size_t>(sid_len) + 6 > len) {
            throw ParseError("persistence record header overruns the record");
        }
        PersistedRecord out;
        out.session_id.assign(record.begin() + 2, record.begin() + 2 + sid_len);
        std::size_t pos = 2 + sid_len;
        out.round = static_cast<std::uint32_t>(record[pos]) |
                    (static_cast<std::uint32_t>(record[pos + 1]) << 8) |
                    (static_cast<std::uint32_t>(record[pos + 2]) << 16) |
                    (static_cast<std::uint32_t>(record[pos + 3]) << 24);
        pos += 4;
        out.params = model::deserialize_params(BytesView(record).subspan(pos));
        records.push_back(std::move(out));
    }
    return records;
}

std::optional<model::ModelParameters> ParamServer::get_global(const std::string& session_id,
                                                              std::uint32_t round) const {
    std::lock_guard lock(mutex_);
    auto session = sessions_.find(session_id);
    if (session == sessions_.end()) {
        return std::nullopt;
    }
    auto record = session->second.find(round);
    if (record == session->second.end()) {
        return std::nullopt;
    }
    return record->second.params;
}

std::optional<model::ModelParameters> ParamServer::get_latest(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    auto session = sessions_.find(session_id);
    if (session == sessions_.end() || session->second.empty()) {
        return std::nullopt;
    }
    return session->second.rbegin()->second.params;
}

std::optional<GlobalRecord> ParamServer::global_record(const std::string& session_id,
                                                       std::uint32_t round) const {
    std::lock_guard lock(mutex_);
    auto session = sessions_.find(session_id);
    if (session == sessions_.end()) {
        return std::nullopt;
    }
    auto record = session->second.find(round);
    if (record == session->second.end()) {
        return std::nullopt;
    }
    return record->second;
}

std::vector<std::uint32_t> ParamServer::stored_rounds(const std::string& session_id) const {
    std::lock_guard lock(mutex_);
    std::vector<std::uint32_t> rounds;
    auto session = sessions_.find(session_id);
    if (session != sessions_.end()) {
        for (const auto& [round, record] : session->second) {
            rounds.push_back(round);
        }
    }
    return rounds;
}

std::size_t ParamServer::duplicate_count() const {
    std::lock_guard lock(mutex_);
    return duplicates_;
}

std::size_t ParamServer::regression_count() const {
    std::lock_guard lock(mutex_);
    return regressions_;
}

} // namespace sdflmq::pserver
