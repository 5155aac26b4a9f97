#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilvad {

// Row-sum tolerance for attention arriving from outside (reduced precision).
inline constexpr double kIngestTolerance = 1e-4;
// Row-sum tolerance for rows produced by renormalize().
inline constexpr double kRenormTolerance = 1e-6;

// Raised for documented operation errors ("no generated steps", ...).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Partition of the token axis:
//   [0, n_system)                system prompt
//   [n_system, +n_visual)        visual patch tokens, row-major over the grid
//   [.., n_input)                query prompt
//   [n_input, ...)               generated tokens
class TokenLayout {
public:
    TokenLayout(std::size_t n_system, std::size_t n_visual, std::size_t n_query,
                std::size_t grid_rows, std::size_t grid_cols);

    std::size_t n_system() const { return n_system_; }
    std::size_t n_visual() const { return n_visual_; }
    std::size_t n_query() const { return n_query_; }
    std::size_t grid_rows() const { return grid_rows_; }
    std::size_t grid_cols() const { return grid_cols_; }

    std::size_t visual_begin() const { return n_system_; }
    std::size_t visual_end() const { return n_system_ + n_visual_; }
    std::size_t n_input() const { return n_system_ + n_visual_ + n_query_; }

    // Key length of the row recorded at generation step t.
    std::size_t keys_at_step(std::size_t step) const { return n_input() + step + 1; }

    friend bool operator==(const TokenLayout&, const TokenLayout&) = default;

private:
    std::size_t n_system_;
    std::size_t n_visual_;
    std::size_t n_query_;
    std::size_t grid_rows_;
    std::size_t grid_cols_;
};

// One attention row: nonnegative weights over key positions [0, n_keys).
using AttentionRow = std::vector<double>;

// Attention of the current query token at one generation step, for every
// layer and head. Stored layer-major, head-major, key-minor.
class StepAttention {
public:
    StepAttention(std::size_t step_index, std::size_t n_layers, std::size_t n_heads,
                  std::size_t n_keys, std::vector<double> values);

    std::size_t step_index() const { return step_index_; }
    std::size_t n_layers() const { return n_layers_; }
    std::size_t n_heads() const { return n_heads_; }
    std::size_t n_keys() const { return n_keys_; }

    std::span<const double> row(std::size_t layer, std::size_t head) const;
    std::span<double> row(std::size_t layer, std::size_t head);

    // All H rows of one layer, contiguous.
    std::span<const double> layer(std::size_t layer) const;
    std::span<double> layer(std::size_t layer);

    std::span<const double> values() const { return values_; }

    friend bool operator==(const StepAttention&, const StepAttention&) = default;

private:
    std::size_t step_index_;
    std::size_t n_layers_;
    std::size_t n_heads_;
    std::size_t n_keys_;
    std::vector<double> values_;
};

class AttentionTrace {
public:
    AttentionTrace(TokenLayout layout, std::size_t n_layers, std::size_t n_heads,
                   std::vector<StepAttention> steps,
                   std::optional<std::vector<std::uint32_t>> token_ids = std::nullopt);

    const TokenLayout& layout() const { return layout_; }
    std::size_t n_layers() const { return n_layers_; }
    std::size_t n_heads() const { return n_heads_; }
    std::size_t n_steps() const { return steps_.size(); }
    const std::vector<StepAttention>& steps() const { return steps_; }
    const StepAttention& step(std::size_t t) const { return steps_.at(t); }
    const std::optional<std::vector<std::uint32_t>>& token_ids() const { return token_ids_; }

    friend bool operator==(const AttentionTrace&, const AttentionTrace&) = default;

private:
    TokenLayout layout_;
    std::size_t n_layers_;
    std::size_t n_heads_;
    std::vector<StepAttention> steps_;
    std::optional<std::vector<std::uint32_t>> token_ids_;
};

// Raw activation counts S and the normalized map over visual tokens.
class SaliencyMap {
public:
    SaliencyMap(std::vector<std::uint32_t> raw_counts, std::vector<double> normalized);

    const std::vector<std::uint32_t>& raw_counts() const { return raw_counts_; }
    const std::vector<double>& normalized() const { return normalized_; }
    std::size_t size() const { return raw_counts_.size(); }

    friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;

private:
    std::vector<std::uint32_t> raw_counts_;
    std::vector<double> normalized_;
};

struct EnhancementConfig {
    std::size_t window_T = 10;
    double tau = 5.0;
    double alpha = 5.0;
    double beta = 1.0;
    double rho = 0.5;
    bool enable_visual = true;
    bool enable_text = true;

    // Throws std::invalid_argument on tau <= 0, rho outside (0,1], window_T == 0,
    // or negative alpha/beta.
    void validate() const;
};

// Per-layer sorted head indices (H_v, H_e or H_t).
struct HeadSelection {
    std::vector<std::vector<std::size_t>> per_layer;

    bool contains(std::size_t layer, std::size_t head) const;
    friend bool operator==(const HeadSelection&, const HeadSelection&) = default;
};

// Evidence-weighted score w for each generated token so far, and its
// divide-by-max normalization.
struct EvidenceWeights {
    std::vector<double> raw;
    std::vector<double> normalized;

    std::size_t size() const { return raw.size(); }
};

// max(1, floor(rho * n_heads))
std::size_t head_set_size(std::size_t n_heads, double rho);

// Indices of the head_set_size(scores.size(), rho) largest scores, sorted
// ascending. Equal scores rank the lower index first.
std::vector<std::size_t> top_heads(std::span<const double> scores, double rho);

// Sum of a row over the visual span of `layout`.
double visual_mass(std::span<const double> row, const TokenLayout& layout);

struct Violation {
    enum class Kind {
        step_index,
        key_length,
        non_finite,
        negative_entry,
        row_sum,
    };

    Kind kind;
    std::size_t step = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::string message;
};

std::string to_string(Violation::Kind kind);

// Every violated trace invariant, with coordinates. Empty when the trace is
// well formed. Pure.
std::vector<Violation> validate_trace(const AttentionTrace& trace,
                                      double tolerance = kIngestTolerance);

}  // namespace ilvad
