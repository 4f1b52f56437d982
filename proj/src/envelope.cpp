#include "sdflmq/fleet/envelope.hpp"

#include <zlib.h>

#include <array>
#include <charconv>
#include <mutex>
#include <random>

#include "sdflmq/errors.hpp"

namespace sdflmq::fleet {

namespace {

constexpr char kBase64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::array<std::int8_t, 256> build_decode_table() {
    std::array<std::int8_t, 256> table{};
    table.fill(-1);
    for (int i = 0; i < 64; ++i) {
        table[static_cast<unsigned char>(kBase64Alphabet[i])] = static_cast<std::int8_t>(i);
    }
    return table;
}

const std::array<std::int8_t, 256> kBase64Decode = build_decode_table();

std::uint32_t parse_u32(std::string_view field, const char* what) {
    std::uint32_t value = 0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || field.empty()) {
        throw ParseError(std::string("envelope header: bad ") + what);
    }
    return value;
}

void check_header_field(const std::string& value, const char* what) {
    if (value.empty()) {
        throw ValidationError(std::string("envelope ") + what + " must be non-empty");
    }
    if (value.find('|') != std::string::npos || value.find('\n') != std::string::npos) {
        throw ValidationError(std::string("envelope ") + what + " must not contain '|' or newline");
    }
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

} // namespace

MessageId MessageId::generate() {
    static std::mutex mutex;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(mutex);
    return MessageId{rng(), rng()};
}

std::string MessageId::to_hex() const {
    static const char digits[] = "0123456789abcdef";
    std::string out(32, '0');
    for (int i = 0; i < 16; ++i) {
        out[15 - i] = digits[(hi >> (4 * i)) & 0xF];
        out[31 - i] = digits[(lo >> (4 * i)) & 0xF];
    }
    return out;
}

MessageId MessageId::from_hex(const std::string& hex) {
    if (hex.size() != 32) {
        throw ParseError("message id must be 32 hex digits");
    }
    MessageId id;
    for (int i = 0; i < 32; ++i) {
        int v = hex_value(hex[i]);
        if (v < 0) {
            throw ParseError("message id must be 32 hex digits");
        }
        if (i < 16) {
            id.hi = (id.hi << 4) | static_cast<std::uint64_t>(v);
        } else {
            id.lo = (id.lo << 4) | static_cast<std::uint64_t>(v);
        }
    }
    return id;
}

std::string base64_encode(BytesView data) {
    std::string out;
    out.reserve(((data.size() + 2) / 3) * 4);
    std::size_t i = 0;
    while (i + 3 <= data.size()) {
        std::uint32_t n = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(kBase64Alphabet[(n >> 18) & 63]);
        out.push_back(kBase64Alphabet[(n >> 12) & 63]);
        out.push_back(kBase64Alphabet[(n >> 6) & 63]);
        out.push_back(kBase64Alphabet[n & 63]);
        i += 3;
    }
    std::size_t rest = data.size() - i;
    if (rest == 1) {
        std::uint32_t n = data[i] << 16;
        out.push_back(kBase64Alphabet[(n >> 18) & 63]);
        out.push_back(kBase64Alphabet[(n >> 12) & 63]);
        out.append("==");
    } else if (rest == 2) {
        std::uint32_t n = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(kBase64Alphabet[(n >> 18) & 63]);
        out.push_back(kBase64Alphabet[(n >> 12) & 63]);
        out.push_back(kBase64Alphabet[(n >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

Bytes base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) {
        throw ParseError("base64 length must be a multiple of 4");
    }
    Bytes out;
    out.reserve((text.size() / 4) * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        const bool last = (i + 4 == text.size());
        int pad = 0;
        std::uint32_t n = 0;
        for (int j = 0; j < 4; ++j) {
            char c = text[i + j];
            if (c == '=') {
                if (!last || j < 2) {
                    throw ParseError("base64 padding only allowed at the end");
                }
                ++pad;
                n <<= 6;
                continue;
            }
            if (pad > 0) {
                throw ParseError("base64 data after padding");
            }
            std::int8_t v = kBase64Decode[static_cast<unsigned char>(c)];
            if (v < 0) {
                throw ParseError("invalid base64 character");
            }
            n = (n << 6) | static_cast<std::uint32_t>(v);
        }
        out.push_back(static_cast<std::uint8_t>((n >> 16) & 0xFF));
        if (pad < 2) {
            out.push_back(static_cast<std::uint8_t>((n >> 8) & 0xFF));
        }
        if (pad < 1) {
            out.push_back(static_cast<std::uint8_t>(n & 0xFF));
        }
        if (pad == 1 && (n & 0xFF) != 0) {
            throw ParseError("non-canonical base64 trailing bits");
        }
        if (pad == 2 && (n & 0xFFFF) != 0) {
            throw ParseError("non-canonical base64 trailing bits");
        }
    }
    return out;
}

Bytes encode_envelope(const Envelope& e) {
    check_header_field(e.sender_id, "sender");
    check_header_field(e.function_name, "function");
    if (e.batch_count == 0) {
        throw ValidationError("envelope batch_count must be positive");
    }
    if (e.batch_index >= e.batch_count) {
        throw ValidationError("envelope batch_index must be < batch_count");
    }
    std::string header = e.sender_id + '|' + e.function_name + '|' + e.message_id.to_hex() + '|' +
                         std::to_string(e.batch_index) + '|' + std::to_string(e.batch_count) +
                         '|' + std::to_string(e.flags) + '\n';
    std::string body = base64_encode(e.body);
    Bytes out;
    out.reserve(header.size() + body.size());
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

Envelope decode_envelope(BytesView bytes) {
    std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    std::size_t newline = text.find('\n');
    if (newline == std::string_view::npos) {
        throw ParseError("envelope missing header line");
    }
    std::string_view header = text.substr(0, newline);
    std::string_view body = text.substr(newline + 1);

    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        std::size_t bar = header.find('|', start);
        if (bar == std::string_view::npos) {
            fields.push_back(header.substr(start));
            break;
        }
        fields.push_back(header.substr(start, bar - start));
        start = bar + 1;
    }
    if (fields.size() != 6) {
        throw ParseError("envelope header must have 6 fields");
    }
    if (fields[0].empty() || fields[1].empty()) {
        throw ParseError("envelope sender/function must be non-empty");
    }

    Envelope e;
    e.sender_id = std::string(fields[0]);
    e.function_name = std::string(fields[1]);
    e.message_id = MessageId::from_hex(std::string(fields[2]));
    e.batch_index = parse_u32(fields[3], "batch index");
    e.batch_count = parse_u32(fields[4], "batch count");
    e.flags = parse_u32(fields[5], "flags");
    if (e.batch_count == 0) {
        throw ParseError("envelope batch_count must be positive");
    }
    if (e.batch_index >= e.batch_count) {
        throw ParseError("envelope batch_index out of range");
    }
    if ((e.flags & ~kFlagCompressed) != 0) {
        throw ParseError("envelope carries unknown flags");
    }
    e.body = base64_decode(body);
    return e;
}

Bytes compress_payload(BytesView payload) {
    uLongf bound = compressBound(static_cast<uLong>(payload.size()));
    Bytes out(bound);
    int rc = ::compress2(out.data(), &bound, payload.data(), static_cast<uLong>(payload.size()),
                         Z_DEFAULT_COMPRESSION);
    if (rc != Z_OK) {
        throw IntegrityError("zlib compression failed: " + std::to_string(rc));
    }
    out.resize(bound);
    return out;
}

Bytes decompress_payload(BytesView compressed) {
    z_stream stream{};
    if (inflateInit(&stream) != Z_OK) {
        throw IntegrityError("zlib inflate init failed");
    }
    stream.next_in = const_cast<Bytef*>(compressed.data());
    stream.avail_in = static_cast<uInt>(compressed.size());

    Bytes out;
    std::array<std::uint8_t, 64 * 1024> chunk;
    int rc = Z_OK;
    do {
        stream.next_out = chunk.data();
        stream.avail_out = static_cast<uInt>(chunk.size());
        rc = inflate(&stream, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&stream);
            throw IntegrityError("corrupt compressed stream: " + std::to_string(rc));
        }
        out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - stream.avail_out));
    } while (rc != Z_STREAM_END);
    bool trailing = stream.avail_in != 0;
    inflateEnd(&stream);
    if (trailing) {
        throw IntegrityError("trailing bytes after compressed stream");
    }
    return out;
}

std::vector<Envelope> split_batches(const std::string& sender_id, const std::string& function_name,
                                    BytesView payload, const SplitOptions& options) {
    if (options.chunk_limit == 0) {
        throw ValidationError("chunk limit must be positive");
    }
    std::uint32_t flags = 0;
    Bytes compressed;
    BytesView body = payload;
    if (options.allow_compression && payload.size() > options.compression_threshold) {
        compressed = compress_payload(payload);
        body = compressed;
        flags |= kFlagCompressed;
    }

    const std::size_t count =
        body.empty() ? 1 : (body.size() + options.chunk_limit - 1) / options.chunk_limit;
    const MessageId id = MessageId::generate();

    std::vector<Envelope> batches;
    batches.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Envelope e;
        e.sender_id = sender_id;
        e.function_name = function_name;
        e.message_id = id;
        e.batch_index = static_cast<std::uint32_t>(i);
        e.batch_count = static_cast<std::uint32_t>(count);
        e.flags = flags;
        const std::size_t begin = i * options.chunk_limit;
        const std::size_t end = std::min(body.size(), begin + options.chunk_limit);
        e.body.assign(body.begin() + begin, body.begin() + end);
        batches.push_back(std::move(e));
    }
    return batches;
}

} // namespace sdflmq::fleet
