#pragma once

// Visual-evidence saliency from inter-layer attention discrepancy.
//
// From the first T generation steps of a trace:
//   1. rank heads per layer by total visual attention, keep the top rho share (H_v);
//   2. average the kept heads' visual attention over the window (A_bar^l);
//   3. mark tokens above tau * mean(A_bar^l) as salient in that layer;
//   4. count 0 -> 1 transitions between consecutive layers (S);
//   5. divide by max(S).
// Tokens salient in every layer (attention sinks) never transition and end at 0.

#include <cstdint>
#include <span>
#include <vector>

#include "ilvad/types.hpp"

namespace ilvad {

using BinaryMask = std::vector<std::uint8_t>;

// Throws Error("no generated steps") on an empty trace.
HeadSelection select_visual_heads(const AttentionTrace& trace, std::size_t window_T, double rho);

// One vector of length n_visual per layer.
std::vector<std::vector<double>> avg_visual_attention(const AttentionTrace& trace,
                                                      const HeadSelection& heads,
                                                      std::size_t window_T);

// 1 where avg_j > tau * mean(avg), strictly.
BinaryMask binarize_layer(std::span<const double> avg, double tau);

// S_j = number of layers l >= 1 where token j is salient at l and not at l-1.
// Throws Error("need at least two layers") for fewer than two masks.
std::vector<std::uint32_t> activation_map(std::span<const BinaryMask> binarized);

SaliencyMap normalize_saliency(std::span<const std::uint32_t> raw);

SaliencyMap build_saliency(const AttentionTrace& trace, const EnhancementConfig& config);

}  // namespace ilvad
