#include <doctest.h>

#include <algorithm>
#include <random>

#include <zlib.h>

#include "sdflmq/clock.hpp"
#include "sdflmq/errors.hpp"
#include "sdflmq/fleet/envelope.hpp"
#include "sdflmq/fleet/reassembly.hpp"

using namespace sdflmq;
using namespace sdflmq::fleet;

namespace {

Bytes random_bytes(std::size_t n, std::mt19937_64& rng) {
    Bytes out(n);
    for (auto& b : out) {
        b = static_cast<std::uint8_t>(rng());
    }
    return out;
}

Envelope sample_envelope() {
    Envelope e;
    e.sender_id = "c1";
    e.function_name = "echo";
    e.message_id = MessageId::generate();
    e.batch_index = 2;
    e.batch_count = 5;
    e.flags = kFlagCompressed;
    e.body = to_bytes("hello world");
    return e;
}

} // namespace

TEST_SUITE("fleet/envelope") {

TEST_CASE("encode/decode round-trips valid envelopes") {
    Envelope e = sample_envelope();
    CHECK(decode_envelope(encode_envelope(e)) == e);

    e.body.clear();
    e.flags = 0;
    CHECK(decode_envelope(encode_envelope(e)) == e);
}

TEST_CASE("header fields reject the separator") {
    Envelope e = sample_envelope();
    e.sender_id = "bad|sender";
    CHECK_THROWS_AS(encode_envelope(e), ValidationError);
    e = sample_envelope();
    e.function_name = "bad\nname";
    CHECK_THROWS_AS(encode_envelope(e), ValidationError);
}

TEST_CASE("decode rejects malformed input with parse errors") {
    const Bytes good = encode_envelope(sample_envelope());

    CHECK_THROWS_AS(decode_envelope(to_bytes("no newline here")), ParseError);
    CHECK_THROWS_AS(decode_envelope(to_bytes("a|b|c\nAAAA")), ParseError); // 3 fields
    CHECK_THROWS_AS(decode_envelope(Bytes(good.begin(), good.begin() + 10)), ParseError);
    CHECK_THROWS_AS(decode_envelope(to_bytes("s|f|zz|0|1|0\n")), ParseError); // bad id
    CHECK_THROWS_AS(
        decode_envelope(to_bytes("s|f|00000000000000000000000000000000|0|0|0\n")),
        ParseError); // count 0
    CHECK_THROWS_AS(
        decode_envelope(to_bytes("s|f|00000000000000000000000000000000|3|2|0\n")),
        ParseError); // index >= count
    CHECK_THROWS_AS(
        decode_envelope(to_bytes("s|f|00000000000000000000000000000000|0|1|7\n")),
        ParseError); // unknown flags
    CHECK_THROWS_AS(
        decode_envelope(to_bytes("s|f|00000000000000000000000000000000|0|1|0\n@@@@")),
        ParseError); // bad base64
    CHECK_THROWS_AS(
        decode_envelope(to_bytes("s|f|00000000000000000000000000000000|0|1|0\nAA=A")),
        ParseError); // data after padding
}

TEST_CASE("message ids render as 32 hex digits and parse back") {
    MessageId id{0x0123456789abcdefull, 0xfedcba9876543210ull};
    CHECK(id.to_hex() == "0123456789abcdeffedcba9876543210");
    CHECK(MessageId::from_hex(id.to_hex()) == id);
    CHECK_THROWS_AS(MessageId::from_hex("short"), ParseError);
}

TEST_CASE("split sizes follow ceiling arithmetic") {
    SplitOptions options;
    options.chunk_limit = 4;
    options.allow_compression = false;

    auto batches = split_batches("s", "f", to_bytes("0123456789"), options);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].body.size() == 4);
    CHECK(batches[1].body.size() == 4);
    CHECK(batches[2].body.size() == 2);
    for (std::size_t i = 0; i < batches.size(); ++i) {
        CHECK(batches[i].batch_index == i);
        CHECK(batches[i].batch_count == 3);
        CHECK(batches[i].message_id == batches[0].message_id);
    }

    options.chunk_limit = 64 * 1024;
    CHECK(split_batches("s", "f", to_bytes("tiny"), options).size() == 1);

    // ceil(150000 / 65536) == 3
    options.chunk_limit = 65536;
    Bytes payload(150000, 0x42);
    CHECK(split_batches("s", "f", payload, options).size() == 3);
}

TEST_CASE("empty payloads travel as one empty-bodied envelope") {
    auto batches = split_batches("s", "f", {}, {});
    REQUIRE(batches.size() == 1);
    CHECK(batches[0].batch_count == 1);
    CHECK(batches[0].body.empty());
}

TEST_CASE("chunk limit zero is rejected") {
    SplitOptions options;
    options.chunk_limit = 0;
    CHECK_THROWS_AS(split_batches("s", "f", to_bytes("x"), options), ValidationError);
}

TEST_CASE("compression only engages above the threshold") {
    SplitOptions options; // threshold 4 KiB
    auto small = split_batches("s", "f", Bytes(100, 0x00), options);
    CHECK(small[0].flags == 0);

    auto large = split_batches("s", "f", Bytes(8192, 0x00), options);
    CHECK((large[0].flags & kFlagCompressed) != 0);
}

TEST_CASE("a megabyte of zeros compresses below one percent") {
    const Bytes zeros(1024 * 1024, 0x00);
    const Bytes ours = compress_payload(zeros);
    CHECK(ours.size() < zeros.size() / 100);

    // Reference DEFLATE oracle: raw zlib on the same input.
    uLongf reference_size = compressBound(static_cast<uLong>(zeros.size()));
    Bytes reference(reference_size);
    REQUIRE(::compress2(reference.data(), &reference_size, zeros.data(),
                        static_cast<uLong>(zeros.size()), Z_DEFAULT_COMPRESSION) == Z_OK);
    CHECK(reference_size < zeros.size() / 100);

    CHECK(decompress_payload(ours) == zeros);
}

TEST_CASE("decompress inverts compress on random payloads") {
    std::mt19937_64 rng(7);
    for (std::size_t size : {0ull, 1ull, 100ull, 70000ull}) {
        Bytes payload = random_bytes(size, rng);
        CHECK(decompress_payload(compress_payload(payload)) == payload);
    }
}

TEST_CASE("corrupt compressed streams raise integrity errors") {
    Bytes compressed = compress_payload(Bytes(10000, 0x5A));
    compressed[compressed.size() / 2] ^= 0xFF;
    CHECK_THROWS_AS(decompress_payload(compressed), IntegrityError);
    CHECK_THROWS_AS(decompress_payload(to_bytes("not a stream")), IntegrityError);
}

TEST_CASE("reassembly completes exactly once in any arrival order") {
    ManualClock clock;
    std::mt19937_64 rng(11);
    for (int round = 0; round < 20; ++round) {
        const Bytes payload = random_bytes(1 + rng() % 100000, rng);
        SplitOptions options;
        options.chunk_limit = 1 + rng() % 4096;
        auto batches = split_batches("s", "f", payload, options);
        std::shuffle(batches.begin(), batches.end(), rng);

        ReassemblyBuffer buffer(clock);
        std::optional<Bytes> complete;
        for (std::size_t i = 0; i < batches.size(); ++i) {
            auto result = buffer.add(batches[i]);
            if (i + 1 < batches.size()) {
                CHECK_FALSE(result.has_value());
            } else {
                complete = result;
            }
        }
        REQUIRE(complete.has_value());
        CHECK(*complete == payload);
        CHECK(buffer.pending_count() == 0);
    }
}

TEST_CASE("duplicate identical chunks are ignored, conflicting ones fail") {
    ManualClock clock;
    SplitOptions options;
    options.chunk_limit = 8;
    options.allow_compression = false;
    auto batches = split_batches("s", "f", to_bytes("0123456789abcdef!!"), options);
    REQUIRE(batches.size() == 3);

    SUBCASE("identical duplicate") {
        ReassemblyBuffer buffer(clock);
        CHECK_FALSE(buffer.add(batches[0]).has_value());
        CHECK_FALSE(buffer.add(batches[0]).has_value()); // retransmission
        CHECK_FALSE(buffer.add(batches[1]).has_value());
        CHECK(buffer.add(batches[2]).has_value());
    }

    SUBCASE("conflicting duplicate") {
        ReassemblyBuffer buffer(clock);
        CHECK_FALSE(buffer.add(batches[0]).has_value());
        Envelope tampered = batches[0];
        tampered.body[0] ^= 0x01;
        CHECK_THROWS_AS(buffer.add(tampered), IntegrityError);
    }

    SUBCASE("conflicting batch count") {
        ReassemblyBuffer buffer(clock);
        CHECK_FALSE(buffer.add(batches[0]).has_value());
        Envelope liar = batches[1];
        liar.batch_count = 7;
        CHECK_THROWS_AS(buffer.add(liar), IntegrityError);
    }
}

TEST_CASE("stale partial messages are evicted after the timeout") {
    ManualClock clock;
    ReassemblyBuffer buffer(clock, std::chrono::seconds(60));
    SplitOptions options;
    options.chunk_limit = 4;
    auto batches = split_batches("peer", "f", to_bytes("0123456789"), options);

    buffer.add(batches[0]);
    CHECK(buffer.poll(clock.now()).empty());

    clock.advance(std::chrono::seconds(59));
    CHECK(buffer.poll(clock.now()).empty());

    clock.advance(std::chrono::seconds(2));
    auto dropped = buffer.poll(clock.now());
    REQUIRE(dropped.size() == 1);
    CHECK(dropped[0].sender_id == "peer");
    CHECK(dropped[0].received == 1);
    CHECK(dropped[0].expected == 3);
    CHECK(buffer.pending_count() == 0);
}

} // TEST_SUITE
