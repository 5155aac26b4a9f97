#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <set>
#include <sstream>

#include "ilvad/toy_decoder.hpp"
#include "ilvad/trace_io.hpp"
#include "support.hpp"

using namespace ilvad;
using io::TraceErrorCode;

namespace {

using Bytes = std::vector<std::uint8_t>;

// Bitwise CRC-32 (reflected, polynomial 0xEDB88320).
std::uint32_t slow_crc(const Bytes& bytes, std::size_t n) {
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) {
        crc ^= bytes[i];
        for (int b = 0; b < 8; ++b) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
    }
    return ~crc;
}

void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(Bytes& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

void set_u32(Bytes& bytes, std::size_t offset, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void reseal(Bytes& bytes) {
    bytes.resize(bytes.size() - 4);
    put_u32(bytes, slow_crc(bytes, bytes.size()));
}

// Written byte by byte from the format table, independent of the encoder.
Bytes hand_built(bool with_ids) {
    Bytes out{'I', 'L', 'V', 'T'};
    put_u32(out, 1);
    for (std::uint32_t v : {1u, 2u, 0u, 1u, 2u, 1u, 2u, 2u}) put_u32(out, v);
    out.push_back(with_ids ? 1 : 0);
    if (with_ids) {
        put_u32(out, 7);
        put_u32(out, 9);
    }
    // step 0: 4 keys, step 1: 5 keys; two heads each.
    for (float v : {0.25f, 0.25f, 0.25f, 0.25f, 0.5f, 0.125f, 0.125f, 0.25f}) put_f32(out, v);
    for (float v : {0.5f, 0.125f, 0.125f, 0.125f, 0.125f, 0.0f, 0.0f, 0.0f, 0.0f, 1.0f})
        put_f32(out, v);
    put_u32(out, slow_crc(out, out.size()));
    return out;
}

TraceErrorCode code_of(const Bytes& bytes) {
    try {
        io::decode_trace(bytes);
    } catch (const io::TraceError& e) {
        return e.code();
    }
    ADD_FAILURE() << "decode succeeded";
    return TraceErrorCode::io;
}

AttentionTrace sample_trace(std::uint64_t seed, bool ids = true) {
    fixtures::Rng rng(seed);
    const auto layout = fixtures::random_layout(rng);
    return fixtures::random_trace(rng, layout, rng.range(1, 4), rng.range(1, 4), rng.range(1, 5),
                                  true, ids);
}

}  // namespace

TEST(TraceIo, CrcMatchesBitwiseReference) {
    const Bytes data{'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    EXPECT_EQ(io::crc32(data), 0xCBF43926u);
    EXPECT_EQ(io::crc32(data), slow_crc(data, data.size()));
}

TEST(TraceIo, RoundtripIsFloat32Exact) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto trace = sample_trace(seed, seed % 2 == 0);
        EXPECT_EQ(io::decode_trace(io::encode_trace(trace)), trace) << "seed " << seed;
    }
}

TEST(TraceIo, DoubleValuesAreRoundedToFloat) {
    fixtures::Rng rng(1);
    const TokenLayout layout(1, 4, 1, 2, 2);
    const auto trace = fixtures::random_trace(rng, layout, 2, 2, 3);
    const auto back = io::decode_trace(io::encode_trace(trace));
    for (std::size_t t = 0; t < 3; ++t) {
        const auto a = trace.step(t).values();
        const auto b = back.step(t).values();
        for (std::size_t i = 0; i < a.size(); ++i)
            ASSERT_EQ(b[i], static_cast<double>(static_cast<float>(a[i])));
    }
}

TEST(TraceIo, EmptyTraceIsHeaderOnly) {
    const AttentionTrace empty(TokenLayout(1, 4, 2, 2, 2), 3, 2, {});
    const auto bytes = io::encode_trace(empty);
    EXPECT_EQ(bytes.size(), 4u + 4 + 32 + 1 + 4);
    EXPECT_EQ(io::decode_trace(bytes), empty);
}

TEST(TraceIo, EncodingIsDeterministic) {
    const auto trace = sample_trace(3);
    EXPECT_EQ(io::encode_trace(trace), io::encode_trace(trace));
    std::ostringstream a, b;
    EXPECT_EQ(io::write_trace(trace, a), io::encode_trace(trace).size());
    io::write_trace(trace, b);
    EXPECT_EQ(a.str(), b.str());
}

TEST(TraceIo, EncoderMatchesHandBuiltFile) {
    for (bool ids : {false, true}) {
        const auto bytes = hand_built(ids);
        const auto trace = io::decode_trace(bytes);
        EXPECT_EQ(trace.layout(), TokenLayout(1, 2, 0, 1, 2));
        EXPECT_EQ(trace.n_steps(), 2u);
        EXPECT_EQ(trace.step(1).row(0, 1)[4], 1.0);
        EXPECT_EQ(trace.token_ids().has_value(), ids);
        EXPECT_EQ(io::encode_trace(trace), bytes);
    }
}

TEST(TraceIo, ToyDecoderTraceParsesAndValidates) {
    toy::ToyModelConfig config;
    config.seed = 9;
    const auto model = toy::init_model(config);
    const auto prompt = toy::default_prompt(model, toy::make_synthetic_image(model, 2, 2, {1}, 3));
    const auto trace = toy::generate(model, prompt, 4, toy::Mode::ilvad).trace;
    const auto back = io::decode_trace(io::encode_trace(trace));
    EXPECT_TRUE(validate_trace(back).empty());
    EXPECT_EQ(back.token_ids(), trace.token_ids());
}

TEST(TraceIo, RejectsBadMagic) {
    auto bytes = hand_built(false);
    bytes[0] = 'X';
    EXPECT_EQ(code_of(bytes), TraceErrorCode::bad_magic);
}

TEST(TraceIo, RejectsUnsupportedVersion) {
    auto bytes = hand_built(false);
    set_u32(bytes, 4, 2);
    reseal(bytes);
    EXPECT_EQ(code_of(bytes), TraceErrorCode::unsupported_version);
}

TEST(TraceIo, RejectsFlippedCrcByte) {
    auto bytes = hand_built(false);
    bytes.back() ^= 0x01;
    EXPECT_EQ(code_of(bytes), TraceErrorCode::crc_mismatch);
    auto payload = hand_built(false);
    payload[50] ^= 0x10;
    EXPECT_EQ(code_of(payload), TraceErrorCode::crc_mismatch);
}

TEST(TraceIo, RejectsTruncationAtEveryLength) {
    const auto bytes = hand_built(true);
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        const Bytes prefix(bytes.begin(), bytes.begin() + n);
        ASSERT_EQ(code_of(prefix), TraceErrorCode::truncated) << "length " << n;
    }
}

TEST(TraceIo, RejectsTrailingBytes) {
    auto bytes = hand_built(false);
    bytes.push_back(0);
    EXPECT_EQ(code_of(bytes), TraceErrorCode::trailing_data);
}

TEST(TraceIo, RejectsGridMismatch) {
    auto bytes = hand_built(false);
    set_u32(bytes, 8 + 4 * 4, 3);  // grid_cols = 3, but n_visual = 2
    reseal(bytes);
    EXPECT_EQ(code_of(bytes), TraceErrorCode::layout);
}

TEST(TraceIo, RejectsInvariantViolationWithOffset) {
    auto bytes = hand_built(false);
    // First float of step 1, head 0 (0.5 -> 0.75) breaks its row sum.
    const std::size_t offset = 41 + 8 * 4;
    bytes[offset + 2] = 0x40;  // 0x3F000000 -> 0x3F400000
    reseal(bytes);
    try {
        io::decode_trace(bytes);
        FAIL() << "expected an invariant error";
    } catch (const io::TraceError& e) {
        EXPECT_EQ(e.code(), TraceErrorCode::invariant);
        EXPECT_EQ(e.offset(), offset);
        EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
    }
}

TEST(TraceIo, IngestToleranceAcceptsFloatRounding) {
    fixtures::Rng rng(4);
    const TokenLayout layout(0, 9, 0, 3, 3);
    const auto trace = fixtures::random_trace(rng, layout, 2, 2, 2, true);
    EXPECT_NO_THROW(io::decode_trace(io::encode_trace(trace)));
}

TEST(TraceIo, FileHelpers) {
    const auto path = std::filesystem::temp_directory_path() / "ilvad_test_trace_io.ilvt";
    const auto trace = sample_trace(8);
    io::write_trace_file(trace, path);
    EXPECT_EQ(io::read_trace_file(path), trace);
    std::filesystem::remove(path);
    try {
        io::read_trace_file(path);
        FAIL() << "expected an io error";
    } catch (const io::TraceError& e) {
        EXPECT_EQ(e.code(), TraceErrorCode::io);
    }
}

TEST(TraceIo, ErrorCodesHaveDistinctNames) {
    std::set<std::string> names;
    for (auto code : {TraceErrorCode::io, TraceErrorCode::bad_magic,
                      TraceErrorCode::unsupported_version, TraceErrorCode::truncated,
                      TraceErrorCode::trailing_data, TraceErrorCode::crc_mismatch,
                      TraceErrorCode::layout, TraceErrorCode::invariant}) {
        names.insert(io::to_string(code));
    }
    EXPECT_EQ(names.size(), 8u);
}
