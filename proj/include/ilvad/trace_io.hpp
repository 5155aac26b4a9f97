#pragma once

// ILVT: binary attention trace, little-endian.
//
//   offset  size  field
//   0       4     magic "ILVT"
//   4       4     u32 version (1)
//   8       32    u32 n_system, n_visual, n_query, grid_rows, grid_cols,
//                     n_layers, n_heads, n_steps
//   40      1     u8 has_token_ids
//   41      ...   if has_token_ids: n_steps x u32 token id
//           ...   for t, l, h ascending: (n_input + t + 1) x f32
//           4     u32 CRC-32 (IEEE) of every preceding byte

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ilvad/types.hpp"

namespace ilvad::io {

inline constexpr std::uint32_t kTraceVersion = 1;

enum class TraceErrorCode {
    io,
    bad_magic,
    unsupported_version,
    truncated,
    trailing_data,
    crc_mismatch,
    layout,
    invariant,
};

std::string to_string(TraceErrorCode code);

class TraceError : public std::runtime_error {
public:
    TraceError(TraceErrorCode code, std::size_t offset, const std::string& what);

    TraceErrorCode code() const { return code_; }
    // Byte offset the problem was detected at.
    std::size_t offset() const { return offset_; }

private:
    TraceErrorCode code_;
    std::size_t offset_;
};

std::vector<std::uint8_t> encode_trace(const AttentionTrace& trace);

// Fully validates: framing, CRC, layout, then validate_trace at `tolerance`.
AttentionTrace decode_trace(std::span<const std::uint8_t> bytes,
                            double tolerance = kIngestTolerance);

// Returns the byte count written.
std::size_t write_trace(const AttentionTrace& trace, std::ostream& sink);
AttentionTrace read_trace(std::istream& source, double tolerance = kIngestTolerance);

std::size_t write_trace_file(const AttentionTrace& trace, const std::filesystem::path& path);
AttentionTrace read_trace_file(const std::filesystem::path& path,
                               double tolerance = kIngestTolerance);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace ilvad::io
