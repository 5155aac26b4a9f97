#pragma once

// Evidence-guided attention rescaling for one generation step.
//
// Per layer, on the current query row of every head:
//   H_e = top-rho heads by evidence ratio e = sum(S_hat * A_vis) / sum(A_vis)
//   H_t = top-rho heads by visual attention mass
//   rows in H_e: visual entries scaled by exp(alpha * S_hat_j)
//   w  += sum over H_t of sum(S_hat * A_vis), on the visually enhanced rows
//   rows in H_t: each earlier generated key k scaled by (w_hat_k + beta)
//   every modified row renormalized to sum 1; untouched rows stay bit-identical.
// After the last layer w is divided by L * |H_t| and appended to the running
// weights, which are renormalized (divide-by-max) over all tokens so far.

#include <span>
#include <vector>

#include "ilvad/types.hpp"

namespace ilvad {

// 0 when the row has no visual mass.
double evidence_ratio(std::span<const double> row, const TokenLayout& layout,
                      const SaliencyMap& saliency);

HeadSelection select_evidence_heads(const StepAttention& step, const TokenLayout& layout,
                                    const SaliencyMap& saliency, double rho);

HeadSelection select_text_heads(const StepAttention& step, const TokenLayout& layout, double rho);

// Unnormalized.
AttentionRow enhance_visual(std::span<const double> row, const TokenLayout& layout,
                            const SaliencyMap& saliency, double alpha);

// Current token's w over all layers of `step` and the heads in `text_heads`.
double evidence_weight(const StepAttention& step, const TokenLayout& layout,
                       const SaliencyMap& saliency, const HeadSelection& text_heads);

EvidenceWeights normalize_weights(std::span<const double> raw);

// Unnormalized. `weights` must cover every generated key before the query.
AttentionRow enhance_text(std::span<const double> row, const TokenLayout& layout,
                          const EvidenceWeights& weights, double beta);

// Throws Error("degenerate attention row") when the row has no positive mass.
AttentionRow renormalize(std::span<const double> row);

struct StepResult {
    StepAttention step;
    EvidenceWeights weights;
};

// `running` holds the weights of the step_index() tokens generated before `step`.
StepResult apply_step(const StepAttention& step, const TokenLayout& layout,
                      const SaliencyMap& saliency, const EvidenceWeights& running,
                      const EnhancementConfig& config);

// apply_step folded over every step of a trace.
AttentionTrace apply_trace(const AttentionTrace& trace, const SaliencyMap& saliency,
                           const EnhancementConfig& config);

// Layer-at-a-time form of apply_step. A forward pass only exposes layer l's
// rows after layer l-1 has consumed its modified rows, so the decoder drives
// this directly: begin_step, enhance_layer for each layer in order, end_step.
class StepEnhancer {
public:
    StepEnhancer(TokenLayout layout, SaliencyMap saliency, EnhancementConfig config,
                 EvidenceWeights running = {});

    void begin_step(std::size_t n_layers);
    // `rows` holds n_heads rows of n_keys entries, modified in place.
    void enhance_layer(std::span<double> rows, std::size_t n_heads, std::size_t n_keys);
    void end_step();

    const EvidenceWeights& weights() const { return weights_; }

private:
    TokenLayout layout_;
    SaliencyMap saliency_;
    EnhancementConfig config_;
    EvidenceWeights weights_;
    std::vector<double> visual_factors_;  // exp(alpha * S_hat_j)
    std::size_t n_layers_ = 0;
    std::size_t layers_seen_ = 0;
    std::size_t text_heads_ = 0;
    double evidence_sum_ = 0.0;
    bool in_step_ = false;
};

}  // namespace ilvad
