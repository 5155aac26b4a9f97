#include "ilvad/enhancement.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ilvad/portable_math.hpp"

namespace ilvad {

namespace {

void require_saliency_fits(const TokenLayout& layout, const SaliencyMap& saliency) {
    if (saliency.size() != layout.n_visual()) {
        throw std::invalid_argument("saliency map length differs from n_visual");
    }
}

void require_row_covers_visual(std::size_t n_keys, const TokenLayout& layout) {
    if (n_keys < layout.visual_end()) {
        throw std::invalid_argument("attention row does not cover the visual span");
    }
}

// Number of generated keys strictly before the query in a row of n_keys.
std::size_t prior_generated(std::size_t n_keys, const TokenLayout& layout) {
    return n_keys > layout.n_input() ? n_keys - layout.n_input() - 1 : 0;
}

double weighted_visual_sum(std::span<const double> row, const TokenLayout& layout,
                           const SaliencyMap& saliency) {
    const auto& s_hat = saliency.normalized();
    double sum = 0.0;
    for (std::size_t j = 0; j < layout.n_visual(); ++j) {
        sum += s_hat[j] * row[layout.visual_begin() + j];
    }
    return sum;
}

void renormalize_in_place(std::span<double> row) {
    double sum = 0.0;
    for (double v : row) sum += v;
    if (!(sum > 0.0)) throw Error("degenerate attention row");
    for (double& v : row) v /= sum;
}

}  // namespace

double evidence_ratio(std::span<const double> row, const TokenLayout& layout,
                      const SaliencyMap& saliency) {
    require_saliency_fits(layout, saliency);
    require_row_covers_visual(row.size(), layout);
    const double denom = visual_mass(row, layout);
    if (!(denom > 0.0)) return 0.0;
    return weighted_visual_sum(row, layout, saliency) / denom;
}

HeadSelection select_evidence_heads(const StepAttention& step, const TokenLayout& layout,
                                    const SaliencyMap& saliency, double rho) {
    HeadSelection selection;
    std::vector<double> ratios(step.n_heads());
    for (std::size_t l = 0; l < step.n_layers(); ++l) {
        for (std::size_t h = 0; h < step.n_heads(); ++h) {
            ratios[h] = evidence_ratio(step.row(l, h), layout, saliency);
        }
        selection.per_layer.push_back(top_heads(ratios, rho));
    }
    return selection;
}

HeadSelection select_text_heads(const StepAttention& step, const TokenLayout& layout, double rho) {
    require_row_covers_visual(step.n_keys(), layout);
    HeadSelection selection;
    std::vector<double> mass(step.n_heads());
    for (std::size_t l = 0; l < step.n_layers(); ++l) {
        for (std::size_t h = 0; h < step.n_heads(); ++h) {
            mass[h] = visual_mass(step.row(l, h), layout);
        }
        selection.per_layer.push_back(top_heads(mass, rho));
    }
    return selection;
}

AttentionRow enhance_visual(std::span<const double> row, const TokenLayout& layout,
                            const SaliencyMap& saliency, double alpha) {
    require_saliency_fits(layout, saliency);
    require_row_covers_visual(row.size(), layout);
    AttentionRow out(row.begin(), row.end());
    const auto& s_hat = saliency.normalized();
    for (std::size_t j = 0; j < layout.n_visual(); ++j) {
        out[layout.visual_begin() + j] *= detail::portable_exp(alpha * s_hat[j]);
    }
    return out;
}

double evidence_weight(const StepAttention& step, const TokenLayout& layout,
                       const SaliencyMap& saliency, const HeadSelection& text_heads) {
    require_saliency_fits(layout, saliency);
    if (text_heads.per_layer.size() != step.n_layers()) {
        throw std::invalid_argument("text head selection does not match layer count");
    }
    double sum = 0.0;
    std::size_t per_layer = 0;
    for (std::size_t l = 0; l < step.n_layers(); ++l) {
        const auto& heads = text_heads.per_layer[l];
        per_layer = heads.size();
        for (std::size_t h : heads) sum += weighted_visual_sum(step.row(l, h), layout, saliency);
    }
    if (per_layer == 0) return 0.0;
    return sum / static_cast<double>(step.n_layers() * per_layer);
}

EvidenceWeights normalize_weights(std::span<const double> raw) {
    EvidenceWeights weights{std::vector<double>(raw.begin(), raw.end()),
                            std::vector<double>(raw.size(), 0.0)};
    const double peak = raw.empty() ? 0.0 : *std::max_element(raw.begin(), raw.end());
    if (peak > 0.0) {
        for (std::size_t k = 0; k < raw.size(); ++k) {
            weights.normalized[k] = std::max(raw[k], 0.0) / peak;
        }
    }
    return weights;
}

AttentionRow enhance_text(std::span<const double> row, const TokenLayout& layout,
                          const EvidenceWeights& weights, double beta) {
    const std::size_t prior = prior_generated(row.size(), layout);
    if (weights.normalized.size() < prior) {
        throw std::invalid_argument("evidence weights do not cover the generated context");
    }
    AttentionRow out(row.begin(), row.end());
    for (std::size_t k = 0; k < prior; ++k) {
        out[layout.n_input() + k] *= weights.normalized[k] + beta;
    }
    return out;
}

AttentionRow renormalize(std::span<const double> row) {
    AttentionRow out(row.begin(), row.end());
    renormalize_in_place(out);
    return out;
}

StepEnhancer::StepEnhancer(TokenLayout layout, SaliencyMap saliency, EnhancementConfig config,
                           EvidenceWeights running)
    : layout_(layout),
      saliency_(std::move(saliency)),
      config_(config),
      weights_(std::move(running)) {
    config_.validate();
    require_saliency_fits(layout_, saliency_);
    if (weights_.normalized.size() != weights_.raw.size()) {
        weights_ = normalize_weights(weights_.raw);
    }
    visual_factors_.reserve(saliency_.size());
    for (double s : saliency_.normalized()) visual_factors_.push_back(detail::portable_exp(config_.alpha * s));
}

void StepEnhancer::begin_step(std::size_t n_layers) {
    if (n_layers == 0) throw std::invalid_argument("StepEnhancer: zero layers");
    n_layers_ = n_layers;
    layers_seen_ = 0;
    text_heads_ = 0;
    evidence_sum_ = 0.0;
    in_step_ = true;
}

void StepEnhancer::enhance_layer(std::span<double> rows, std::size_t n_heads, std::size_t n_keys) {
    if (!in_step_ || layers_seen_ >= n_layers_) {
        throw std::logic_error("StepEnhancer: enhance_layer outside begin_step/end_step");
    }
    if (rows.size() != n_heads * n_keys) {
        throw std::invalid_argument("StepEnhancer: rows do not match n_heads x n_keys");
    }
    require_row_covers_visual(n_keys, layout_);
    const std::size_t prior = prior_generated(n_keys, layout_);
    if (config_.enable_text && weights_.size() < prior) {
        throw std::invalid_argument("evidence weights do not cover the generated context");
    }
    auto row = [&](std::size_t h) { return rows.subspan(h * n_keys, n_keys); };

    std::vector<double> ratios(n_heads);
    std::vector<double> mass(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        ratios[h] = evidence_ratio(row(h), layout_, saliency_);
        mass[h] = visual_mass(row(h), layout_);
    }
    const auto evidence_heads = top_heads(ratios, config_.rho);
    const auto text_heads = top_heads(mass, config_.rho);
    std::vector<bool> modified(n_heads, false);

    if (config_.enable_visual) {
        for (std::size_t h : evidence_heads) {
            auto r = row(h);
            for (std::size_t j = 0; j < layout_.n_visual(); ++j) {
                r[layout_.visual_begin() + j] *= visual_factors_[j];
            }
            modified[h] = true;
        }
    }

    for (std::size_t h : text_heads) {
        evidence_sum_ += weighted_visual_sum(row(h), layout_, saliency_);
    }
    text_heads_ = text_heads.size();

    if (config_.enable_text && prior > 0) {
        for (std::size_t h : text_heads) {
            auto r = row(h);
            for (std::size_t k = 0; k < prior; ++k) {
                r[layout_.n_input() + k] *= weights_.normalized[k] + config_.beta;
            }
            modified[h] = true;
        }
    }

    for (std::size_t h = 0; h < n_heads; ++h) {
        if (modified[h]) renormalize_in_place(row(h));
    }
    ++layers_seen_;
}

void StepEnhancer::end_step() {
    if (!in_step_ || layers_seen_ != n_layers_) {
        throw std::logic_error("StepEnhancer: end_step before every layer was enhanced");
    }
    const double w = evidence_sum_ / static_cast<double>(n_layers_ * text_heads_);
    auto raw = weights_.raw;
    raw.push_back(w);
    weights_ = normalize_weights(raw);
    in_step_ = false;
}

StepResult apply_step(const StepAttention& step, const TokenLayout& layout,
                      const SaliencyMap& saliency, const EvidenceWeights& running,
                      const EnhancementConfig& config) {
    StepEnhancer enhancer(layout, saliency, config, running);
    StepAttention out = step;
    enhancer.begin_step(out.n_layers());
    for (std::size_t l = 0; l < out.n_layers(); ++l) {
        enhancer.enhance_layer(out.layer(l), out.n_heads(), out.n_keys());
    }
    enhancer.end_step();
    return {std::move(out), enhancer.weights()};
}

AttentionTrace apply_trace(const AttentionTrace& trace, const SaliencyMap& saliency,
                           const EnhancementConfig& config) {
    StepEnhancer enhancer(trace.layout(), saliency, config);
    std::vector<StepAttention> steps;
    steps.reserve(trace.n_steps());
    for (const auto& step : trace.steps()) {
        StepAttention out = step;
        enhancer.begin_step(out.n_layers());
        for (std::size_t l = 0; l < out.n_layers(); ++l) {
            enhancer.enhance_layer(out.layer(l), out.n_heads(), out.n_keys());
        }
        enhancer.end_step();
        steps.push_back(std::move(out));
    }
    return AttentionTrace(trace.layout(), trace.n_layers(), trace.n_heads(), std::move(steps),
                          trace.token_ids());
}

}  // namespace ilvad
