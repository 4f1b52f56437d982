#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sdflmq/bytes.hpp"

namespace sdflmq::fleet {

// 128-bit random id shared by all batches of one logical message.
struct MessageId {
    std::uint64_t hi = 0;
    std::uint64_t lo = 0;

    static MessageId generate();
    static MessageId from_hex(const std::string& hex); // throws ParseError
    std::string to_hex() const;

    auto operator<=>(const MessageId&) const = default;
};

enum EnvelopeFlags : std::uint32_t {
    kFlagCompressed = 1u << 0,
};

// One wire unit of the fleet RFC layer. A logical payload maps to batch_count
// envelopes sharing a message_id, indices 0..batch_count-1.
struct Envelope {
    std::string sender_id;
    std::string function_name;
    MessageId message_id;
    std::uint32_t batch_index = 0;
    std::uint32_t batch_count = 1;
    std::uint32_t flags = 0;
    Bytes body;

    bool operator==(const Envelope&) const = default;
};

// Wire format: one UTF-8 header line "sender|function|message_id|index|count|flags"
// (fields forbid '|' and newline), then '\n', then the body as RFC 4648 base64.
Bytes encode_envelope(const Envelope& e);
Envelope decode_envelope(BytesView bytes); // throws ParseError

struct SplitOptions {
    std::size_t chunk_limit = 64 * 1024;
    bool allow_compression = true;
    std::size_t compression_threshold = 4 * 1024;
};

// Compresses the payload when it exceeds the threshold, then slices it into
// ceil(size/chunk_limit) envelopes sharing a fresh message_id.
std::vector<Envelope> split_batches(const std::string& sender_id, const std::string& function_name,
                                    BytesView payload, const SplitOptions& options = {});

// RFC 1951/1950 (zlib) codec. decompress throws IntegrityError on corrupt input.
Bytes compress_payload(BytesView payload);
Bytes decompress_payload(BytesView compressed);

// Strict RFC 4648 base64 with padding; decode rejects any non-canonical input.
std::string base64_encode(BytesView data);
Bytes base64_decode(std::string_view text); // throws ParseError

} // namespace sdflmq::fleet
