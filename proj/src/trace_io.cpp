#include "ilvad/trace_io.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

namespace ilvad::io {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic = {'I', 'L', 'V', 'T'};
constexpr std::size_t kHeaderFields = 8;

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(std::span<const std::uint8_t> v) { bytes_.insert(bytes_.end(), v.begin(), v.end()); }

    std::vector<std::uint8_t>& bytes() { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            std::ostringstream msg;
            msg << "truncated: need " << n << " bytes at offset " << pos_ << ", file has "
                << bytes_.size();
            throw TraceError(TraceErrorCode::truncated, pos_, msg.str());
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw std::invalid_argument(std::string("ILVT: ") + what + " exceeds u32");
    }
    return static_cast<std::uint32_t>(v);
}

// Total file size implied by a header, or SIZE_MAX if it does not fit.
std::size_t expected_size(std::uint64_t n_input, std::uint64_t n_layers, std::uint64_t n_heads,
                          std::uint64_t n_steps, bool has_ids) {
    constexpr std::uint64_t kCap = std::uint64_t{1} << 56;
    std::uint64_t total = 4 + 4 + 4 * kHeaderFields + 1 + 4;
    if (has_ids) total += 4 * n_steps;
    const std::uint64_t rows = n_layers * n_heads;
    if (n_layers > kCap || n_heads > kCap || rows > kCap || n_steps > kCap || n_input > kCap) {
        return std::numeric_limits<std::size_t>::max();
    }
    // sum over t of (n_input + t + 1) = n_steps * n_input + n_steps * (n_steps + 1) / 2
    const long double floats =
        static_cast<long double>(rows) *
        (static_cast<long double>(n_steps) * static_cast<long double>(n_input) +
         static_cast<long double>(n_steps) * (static_cast<long double>(n_steps) + 1) / 2.0L);
    if (floats * 4.0L > static_cast<long double>(kCap)) {
        return std::numeric_limits<std::size_t>::max();
    }
    total += 4 * (rows * (n_steps * n_input + n_steps * (n_steps + 1) / 2));
    return static_cast<std::size_t>(total);
}

}  // namespace

std::string to_string(TraceErrorCode code) {
    switch (code) {
        case TraceErrorCode::io: return "io";
        case TraceErrorCode::bad_magic: return "bad_magic";
        case TraceErrorCode::unsupported_version: return "unsupported_version";
        case TraceErrorCode::truncated: return "truncated";
        case TraceErrorCode::trailing_data: return "trailing_data";
        case TraceErrorCode::crc_mismatch: return "crc_mismatch";
        case TraceErrorCode::layout: return "layout";
        case TraceErrorCode::invariant: return "invariant";
    }
    return "unknown";
}

TraceError::TraceError(TraceErrorCode code, std::size_t offset, const std::string& what)
    : std::runtime_error(what), code_(code), offset_(offset) {}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    constexpr std::size_t kChunk = 1u << 30;
    for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
        const auto len = static_cast<uInt>(std::min(kChunk, bytes.size() - off));
        crc = ::crc32(crc, bytes.data() + off, len);
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_trace(const AttentionTrace& trace) {
    const auto& layout = trace.layout();
    ByteWriter w;
    w.raw(kMagic);
    w.u32(kTraceVersion);
    w.u32(checked_u32(layout.n_system(), "n_system"));
    w.u32(checked_u32(layout.n_visual(), "n_visual"));
    w.u32(checked_u32(layout.n_query(), "n_query"));
    w.u32(checked_u32(layout.grid_rows(), "grid_rows"));
    w.u32(checked_u32(layout.grid_cols(), "grid_cols"));
    w.u32(checked_u32(trace.n_layers(), "n_layers"));
    w.u32(checked_u32(trace.n_heads(), "n_heads"));
    w.u32(checked_u32(trace.n_steps(), "n_steps"));
    w.u8(trace.token_ids() ? 1 : 0);
    if (trace.token_ids()) {
        for (auto id : *trace.token_ids()) w.u32(id);
    }
    for (std::size_t t = 0; t < trace.n_steps(); ++t) {
        const auto& step = trace.step(t);
        if (step.n_keys() != layout.keys_at_step(t)) {
            std::ostringstream msg;
            msg << "ILVT: step " << t << " has " << step.n_keys() << " keys, format requires "
                << layout.keys_at_step(t);
            throw std::invalid_argument(msg.str());
        }
        for (double v : step.values()) w.f32(static_cast<float>(v));
    }
    w.u32(crc32(w.bytes()));
    return std::move(w.bytes());
}

AttentionTrace decode_trace(std::span<const std::uint8_t> bytes, double tolerance) {
    ByteReader r(bytes);
    for (std::size_t i = 0; i < kMagic.size(); ++i) {
        if (r.u8() != kMagic[i]) {
            throw TraceError(TraceErrorCode::bad_magic, 0, "not an ILVT file (bad magic)");
        }
    }
    const std::uint32_t version = r.u32();
    if (version != kTraceVersion) {
        std::ostringstream msg;
        msg << "unsupported ILVT version " << version;
        throw TraceError(TraceErrorCode::unsupported_version, 4, msg.str());
    }
    std::array<std::uint32_t, kHeaderFields> h{};
    for (auto& field : h) field = r.u32();
    const auto [n_system, n_visual, n_query, grid_rows, grid_cols, n_layers, n_heads, n_steps] = h;
    const std::size_t flag_offset = r.pos();
    const std::uint8_t has_ids = r.u8();
    if (has_ids > 1) {
        throw TraceError(TraceErrorCode::invariant, flag_offset, "has_token_ids must be 0 or 1");
    }

    const std::uint64_t n_input = std::uint64_t{n_system} + n_visual + n_query;
    const std::size_t want = expected_size(n_input, n_layers, n_heads, n_steps, has_ids == 1);
    if (bytes.size() < want) {
        std::ostringstream msg;
        msg << "truncated: header implies " << want << " bytes, file has " << bytes.size();
        throw TraceError(TraceErrorCode::truncated, bytes.size(), msg.str());
    }
    if (bytes.size() > want) {
        std::ostringstream msg;
        msg << "trailing data: header implies " << want << " bytes, file has " << bytes.size();
        throw TraceError(TraceErrorCode::trailing_data, want, msg.str());
    }

    const std::size_t crc_offset = bytes.size() - 4;
    const std::uint32_t computed = crc32(bytes.first(crc_offset));
    ByteReader crc_reader(bytes.subspan(crc_offset));
    const std::uint32_t stored = crc_reader.u32();
    if (computed != stored) {
        std::ostringstream msg;
        msg << std::hex << "CRC mismatch: stored 0x" << stored << ", computed 0x" << computed;
        throw TraceError(TraceErrorCode::crc_mismatch, crc_offset, msg.str());
    }

    if (n_visual == 0 || std::uint64_t{grid_rows} * grid_cols != n_visual) {
        std::ostringstream msg;
        msg << "layout: grid " << grid_rows << "x" << grid_cols << " vs n_visual " << n_visual;
        throw TraceError(TraceErrorCode::layout, 8, msg.str());
    }
    if (n_layers == 0 || n_heads == 0) {
        throw TraceError(TraceErrorCode::layout, 28, "layout: n_layers and n_heads must be >= 1");
    }
    const TokenLayout layout(n_system, n_visual, n_query, grid_rows, grid_cols);

    std::optional<std::vector<std::uint32_t>> ids;
    if (has_ids) {
        ids.emplace(n_steps);
        for (auto& id : *ids) id = r.u32();
    }
    std::vector<StepAttention> steps;
    steps.reserve(n_steps);
    for (std::size_t t = 0; t < n_steps; ++t) {
        const std::size_t n_keys = layout.keys_at_step(t);
        std::vector<double> values(std::size_t{n_layers} * n_heads * n_keys);
        for (double& v : values) v = static_cast<double>(r.f32());
        steps.emplace_back(t, n_layers, n_heads, n_keys, std::move(values));
    }
    AttentionTrace trace(layout, n_layers, n_heads, std::move(steps), std::move(ids));

    const auto violations = validate_trace(trace, tolerance);
    if (!violations.empty()) {
        // Offset of the first offending row.
        const auto& v = violations.front();
        std::size_t offset = 41 + (has_ids ? 4 * std::size_t{n_steps} : 0);
        for (std::size_t t = 0; t < v.step; ++t) {
            offset += 4 * std::size_t{n_layers} * n_heads * layout.keys_at_step(t);
        }
        offset += 4 * (v.layer * n_heads + v.head) * layout.keys_at_step(v.step);
        std::ostringstream msg;
        msg << "invariant violation: " << v.message;
        if (violations.size() > 1) msg << " (+" << violations.size() - 1 << " more)";
        throw TraceError(TraceErrorCode::invariant, offset, msg.str());
    }
    return trace;
}

std::size_t write_trace(const AttentionTrace& trace, std::ostream& sink) {
    const auto bytes = encode_trace(trace);
    sink.write(reinterpret_cast<const char*>(bytes.data()),
               static_cast<std::streamsize>(bytes.size()));
    if (!sink) throw TraceError(TraceErrorCode::io, 0, "write failed");
    return bytes.size();
}

AttentionTrace read_trace(std::istream& source, double tolerance) {
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(source)),
                                    std::istreambuf_iterator<char>());
    if (source.bad()) throw TraceError(TraceErrorCode::io, bytes.size(), "read failed");
    return decode_trace(bytes, tolerance);
}

std::size_t write_trace_file(const AttentionTrace& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw TraceError(TraceErrorCode::io, 0, "cannot open " + path.string() + " for writing");
    const auto n = write_trace(trace, out);
    out.close();
    if (!out) throw TraceError(TraceErrorCode::io, 0, "write failed: " + path.string());
    return n;
}

AttentionTrace read_trace_file(const std::filesystem::path& path, double tolerance) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TraceError(TraceErrorCode::io, 0, "cannot open " + path.string());
    return read_trace(in, tolerance);
}

}  // namespace ilvad::io
