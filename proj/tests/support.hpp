#pragma once

// Shared fixtures for the test binaries: seeded random traces and
// conversions to the plain nested vectors the reference oracle consumes.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "ilvad/types.hpp"

namespace ilvad::fixtures {

// [step][layer][head][key]
using NestedRows = std::vector<std::vector<std::vector<std::vector<double>>>>;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
    std::size_t range(std::size_t lo, std::size_t hi) { return lo + index(hi - lo + 1); }
    bool coin(double p = 0.5) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
    double peak = logits[0];
    for (double v : logits) peak = std::max(peak, v);
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - peak);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

inline TokenLayout random_layout(Rng& rng, std::size_t max_visual = 16) {
    const std::size_t rows = rng.range(1, 4);
    std::size_t cols = rng.range(1, 4);
    while (rows * cols > max_visual) --cols;
    return TokenLayout(rng.range(0, 2), rows * cols, rng.range(0, 3), rows, cols);
}

// Softmax rows with a few "spiky" visual tokens per layer so that salience
// actually varies across layers. With `float_exact` every value is rounded
// to float, so rows sum to 1 only to float precision.
inline AttentionTrace random_trace(Rng& rng, const TokenLayout& layout, std::size_t n_layers,
                                   std::size_t n_heads, std::size_t n_steps,
                                   bool float_exact = false, bool with_ids = false) {
    std::vector<StepAttention> steps;
    // Per-layer spike sets are shared by all steps so averages keep them.
    std::vector<std::vector<double>> spike(n_layers, std::vector<double>(layout.n_visual(), 0.0));
    for (auto& layer : spike) {
        for (double& v : layer) {
            if (rng.coin(0.25)) v = rng.uniform(1.5, 4.0);
        }
    }
    for (std::size_t t = 0; t < n_steps; ++t) {
        const std::size_t n_keys = layout.keys_at_step(t);
        std::vector<double> values;
        values.reserve(n_layers * n_heads * n_keys);
        for (std::size_t l = 0; l < n_layers; ++l) {
            for (std::size_t h = 0; h < n_heads; ++h) {
                std::vector<double> logits(n_keys);
                const double head_gain = rng.uniform(0.0, 1.5);
                for (std::size_t j = 0; j < n_keys; ++j) {
                    logits[j] = rng.uniform(-1.0, 1.0);
                    if (j >= layout.visual_begin() && j < layout.visual_end()) {
                        logits[j] += head_gain * spike[l][j - layout.visual_begin()];
                    }
                }
                auto row = softmax(logits);
                if (float_exact) {
                    for (double& v : row) v = static_cast<double>(static_cast<float>(v));
                }
                values.insert(values.end(), row.begin(), row.end());
            }
        }
        steps.emplace_back(t, n_layers, n_heads, n_keys, std::move(values));
    }
    std::optional<std::vector<std::uint32_t>> ids;
    if (with_ids) {
        ids.emplace();
        for (std::size_t t = 0; t < n_steps; ++t) ids->push_back(static_cast<std::uint32_t>(rng.index(1000)));
    }
    return AttentionTrace(layout, n_layers, n_heads, std::move(steps), std::move(ids));
}

inline std::vector<std::vector<std::vector<double>>> nested_step(const StepAttention& step) {
    std::vector<std::vector<std::vector<double>>> out(step.n_layers());
    for (std::size_t l = 0; l < step.n_layers(); ++l) {
        for (std::size_t h = 0; h < step.n_heads(); ++h) {
            auto row = step.row(l, h);
            out[l].emplace_back(row.begin(), row.end());
        }
    }
    return out;
}

inline NestedRows nested(const AttentionTrace& trace) {
    NestedRows out;
    for (const auto& step : trace.steps()) out.push_back(nested_step(step));
    return out;
}

inline double row_sum(std::span<const double> row) {
    double s = 0.0;
    for (double v : row) s += v;
    return s;
}

}  // namespace ilvad::fixtures
