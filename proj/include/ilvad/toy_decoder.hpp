#pragma once

// A miniature deterministic decoder-only transformer with a synthetic
// patch-grid image front end.
//
// Architecture (pre-LN, no learned norm gains, ReLU MLP of width 4 * d_model):
//   x_p  = embedding_p + position_p
//   x   += W_O [softmax(q_h K_h^T / sqrt(d_k)) V_h]_h     for each layer
//   x   += W_down relu(W_up LN(x))
//   logits = LN(x) U
// Keys and values are cached per position, so each position is computed
// once; rows handed to an interceptor are what the value mixing consumes.
//
// Parameters are drawn from std::mt19937_64, one engine per matrix, seeded
// with seed + (stream + 1) * 0x9E3779B97F4A7C15; a draw u maps to
// (u >> 11) * 2^-53. Nothing else is random.
//
// Evidence pathway: text token embeddings carry a component along
// `query_direction`; planted patches carry one along `evidence_direction`.
// In the first ceil(H/2) heads of layer l, column h * d_k of W_Q gains
// g_l * query_direction and the same column of W_K gains
// g_l * evidence_direction, g_l = evidence_gain * l / (L - 1). Text queries
// thus attend to planted patches with a strength that grows with depth,
// giving layer-varying attention to them.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ilvad/enhancement.hpp"
#include "ilvad/types.hpp"

namespace ilvad::toy {

inline constexpr double kDefaultSignatureStrength = 1.5;

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows(rows), cols(cols), data(rows * cols, 0.0) {}

    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(data).subspan(r * cols, cols);
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct ToyModelConfig {
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_model = 32;
    std::size_t vocab_size = 32;
    std::uint64_t seed = 0;
    std::size_t max_positions = 512;
    double evidence_gain = 2.0;

    std::size_t d_k() const { return d_model / n_heads; }
    std::size_t d_ff() const { return 4 * d_model; }

    // Throws std::invalid_argument.
    void validate() const;
};

struct ToyLayer {
    Matrix w_q;     // d_model x d_model; head h owns columns [h*d_k, (h+1)*d_k)
    Matrix w_k;
    Matrix w_v;
    Matrix w_o;     // d_model x d_model
    Matrix w_up;    // d_model x d_ff
    Matrix w_down;  // d_ff x d_model
};

struct ToyModel {
    ToyModelConfig config;
    Matrix token_embedding;     // vocab_size x d_model
    Matrix position_embedding;  // max_positions x d_model
    Matrix unembedding;         // d_model x vocab_size
    std::vector<double> query_direction;     // unit, zero mean
    std::vector<double> evidence_direction;  // unit, zero mean, orthogonal to query_direction
    std::vector<ToyLayer> layers;
};

ToyModel init_model(const ToyModelConfig& config);

// FNV-1a over the bit patterns of every parameter, in declaration order.
std::uint64_t parameter_checksum(const ToyModel& model);

struct SyntheticImage {
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
    Matrix patch_features;  // (grid_rows * grid_cols) x d_model
    std::vector<std::size_t> planted_evidence;

    std::size_t n_patches() const { return grid_rows * grid_cols; }
};

// Unit-variance noise per patch from `seed`; planted patches add
// signature_strength * sqrt(d_model) * evidence_direction.
SyntheticImage make_synthetic_image(const ToyModel& model, std::size_t grid_rows,
                                    std::size_t grid_cols, std::vector<std::size_t> planted,
                                    std::uint64_t seed,
                                    double signature_strength = kDefaultSignatureStrength);

struct Prompt {
    std::vector<std::uint32_t> system_tokens;
    SyntheticImage image;
    std::vector<std::uint32_t> query_tokens;

    TokenLayout layout() const;
};

// Two system tokens (0, 1) and four query tokens drawn from the model seed.
Prompt default_prompt(const ToyModel& model, SyntheticImage image);

// Receives the current query position's attention rows, layer by layer,
// before they are mixed with the values. Whatever the rows hold on return
// is what the layer uses.
class AttentionInterceptor {
public:
    virtual ~AttentionInterceptor() = default;
    virtual void begin_position(std::size_t /*n_layers*/) {}
    // `rows`: n_heads rows of n_keys entries.
    virtual void on_layer(std::size_t layer, std::span<double> rows, std::size_t n_heads,
                          std::size_t n_keys) = 0;
    virtual void end_position() {}
};

// Runs StepEnhancer inside the forward pass.
class EnhancementInterceptor final : public AttentionInterceptor {
public:
    EnhancementInterceptor(TokenLayout layout, SaliencyMap saliency, EnhancementConfig config);

    void begin_position(std::size_t n_layers) override;
    void on_layer(std::size_t layer, std::span<double> rows, std::size_t n_heads,
                  std::size_t n_keys) override;
    void end_position() override;

    const EvidenceWeights& weights() const { return enhancer_.weights(); }

private:
    StepEnhancer enhancer_;
};

struct PositionOutput {
    std::vector<double> logits;
    std::size_t n_keys = 0;
    std::vector<double> rows;  // n_layers x n_heads x n_keys, after interception
};

// Incremental decoding state with a per-layer key/value cache.
class DecoderSession {
public:
    explicit DecoderSession(const ToyModel& model);

    // Throws ilvad::Error once max_positions is reached.
    PositionOutput push(std::span<const double> input_embedding,
                        AttentionInterceptor* interceptor = nullptr);
    std::size_t length() const { return length_; }

private:
    const ToyModel* model_;
    std::size_t length_ = 0;
    std::vector<std::vector<double>> keys_;    // per layer: length x d_model
    std::vector<std::vector<double>> values_;  // per layer: length x d_model
};

// Input embeddings (token/patch + position) for the prompt positions.
std::vector<std::vector<double>> embed_prompt(const ToyModel& model, const Prompt& prompt);
std::vector<double> embed_token(const ToyModel& model, std::uint32_t token, std::size_t position);

struct ForwardResult {
    std::vector<double> logits;
    // Rows of the last position; step_index is generated.size() - 1, or 0
    // when `generated` is empty and the last position is a prompt token.
    StepAttention attention;
};

// Stateless: runs a fresh session over prompt + generated; only the last
// position is intercepted.
ForwardResult forward_step(const ToyModel& model, const Prompt& prompt,
                           std::span<const std::uint32_t> generated,
                           AttentionInterceptor* interceptor = nullptr);

// Lowest index among the maxima.
std::uint32_t argmax(std::span<const double> logits);

enum class Mode { baseline, ilvad };

struct GenerationResult {
    std::vector<std::uint32_t> tokens;
    AttentionTrace trace;
    // ilvad mode only: the map built by the first pass.
    std::optional<SaliencyMap> saliency;
};

// Greedy decoding of n_steps tokens. Step t of the trace is the attention of
// generated token t. ilvad mode: a baseline pass of min(window_T, n_steps)
// steps builds the saliency map, its output is discarded, and generation
// restarts from the prompt with enhancement active.
GenerationResult generate(const ToyModel& model, const Prompt& prompt, std::size_t n_steps,
                          Mode mode, const EnhancementConfig& config = {});

}  // namespace ilvad::toy
