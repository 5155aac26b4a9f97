#include "ilvad/saliency.hpp"

#include <algorithm>
#include <stdexcept>

namespace ilvad {

namespace {

std::size_t effective_window(const AttentionTrace& trace, std::size_t window_T) {
    return std::min(window_T, trace.n_steps());
}

}  // namespace

HeadSelection select_visual_heads(const AttentionTrace& trace, std::size_t window_T, double rho) {
    if (trace.n_steps() == 0) throw Error("no generated steps");
    const std::size_t window = effective_window(trace, window_T);
    if (window == 0) throw std::invalid_argument("window_T must be at least 1");

    HeadSelection selection;
    selection.per_layer.reserve(trace.n_layers());
    std::vector<double> scores(trace.n_heads());
    for (std::size_t l = 0; l < trace.n_layers(); ++l) {
        std::fill(scores.begin(), scores.end(), 0.0);
        for (std::size_t t = 0; t < window; ++t) {
            for (std::size_t h = 0; h < trace.n_heads(); ++h) {
                scores[h] += visual_mass(trace.step(t).row(l, h), trace.layout());
            }
        }
        selection.per_layer.push_back(top_heads(scores, rho));
    }
    return selection;
}

std::vector<std::vector<double>> avg_visual_attention(const AttentionTrace& trace,
                                                      const HeadSelection& heads,
                                                      std::size_t window_T) {
    if (trace.n_steps() == 0) throw Error("no generated steps");
    if (heads.per_layer.size() != trace.n_layers()) {
        throw std::invalid_argument("head selection does not match trace layer count");
    }
    const auto& layout = trace.layout();
    const std::size_t window = effective_window(trace, window_T);

    std::vector<std::vector<double>> averages(trace.n_layers(),
                                              std::vector<double>(layout.n_visual(), 0.0));
    for (std::size_t l = 0; l < trace.n_layers(); ++l) {
        const auto& layer_heads = heads.per_layer[l];
        if (layer_heads.empty()) throw std::invalid_argument("empty head set");
        auto& avg = averages[l];
        for (std::size_t h : layer_heads) {
            if (h >= trace.n_heads()) throw std::invalid_argument("head index out of range");
            for (std::size_t t = 0; t < window; ++t) {
                auto row = trace.step(t).row(l, h);
                for (std::size_t j = 0; j < layout.n_visual(); ++j) {
                    avg[j] += row[layout.visual_begin() + j];
                }
            }
        }
        const double scale = 1.0 / static_cast<double>(window * layer_heads.size());
        for (double& v : avg) v *= scale;
    }
    return averages;
}

BinaryMask binarize_layer(std::span<const double> avg, double tau) {
    if (avg.empty()) throw std::invalid_argument("binarize_layer: empty input");
    if (!(tau > 0.0)) throw std::invalid_argument("binarize_layer: tau must be positive");
    double sum = 0.0;
    for (double v : avg) sum += v;
    const double threshold = tau * (sum / static_cast<double>(avg.size()));

    BinaryMask mask(avg.size());
    std::transform(avg.begin(), avg.end(), mask.begin(),
                   [threshold](double v) { return static_cast<std::uint8_t>(v > threshold); });
    return mask;
}

std::vector<std::uint32_t> activation_map(std::span<const BinaryMask> binarized) {
    if (binarized.size() < 2) throw Error("need at least two layers");
    const std::size_t n = binarized.front().size();
    std::vector<std::uint32_t> counts(n, 0);
    for (std::size_t l = 1; l < binarized.size(); ++l) {
        const auto& prev = binarized[l - 1];
        const auto& cur = binarized[l];
        if (cur.size() != n || prev.size() != n) {
            throw std::invalid_argument("activation_map: layer masks differ in length");
        }
        for (std::size_t j = 0; j < n; ++j) {
            if (cur[j] && !prev[j]) ++counts[j];
        }
    }
    return counts;
}

SaliencyMap normalize_saliency(std::span<const std::uint32_t> raw) {
    std::vector<double> normalized(raw.size(), 0.0);
    const std::uint32_t peak = raw.empty() ? 0 : *std::max_element(raw.begin(), raw.end());
    if (peak > 0) {
        for (std::size_t j = 0; j < raw.size(); ++j) {
            normalized[j] = static_cast<double>(raw[j]) / static_cast<double>(peak);
        }
    }
    return SaliencyMap(std::vector<std::uint32_t>(raw.begin(), raw.end()), std::move(normalized));
}

SaliencyMap build_saliency(const AttentionTrace& trace, const EnhancementConfig& config) {
    config.validate();
    if (trace.n_layers() < 2) throw Error("need at least two layers");
    const auto heads = select_visual_heads(trace, config.window_T, config.rho);
    const auto averages = avg_visual_attention(trace, heads, config.window_T);

    std::vector<BinaryMask> masks;
    masks.reserve(averages.size());
    for (const auto& avg : averages) masks.push_back(binarize_layer(avg, config.tau));
    return normalize_saliency(activation_map(masks));
}

}  // namespace ilvad
