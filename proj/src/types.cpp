#include "ilvad/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ilvad {

TokenLayout::TokenLayout(std::size_t n_system, std::size_t n_visual, std::size_t n_query,
                         std::size_t grid_rows, std::size_t grid_cols)
    : n_system_(n_system),
      n_visual_(n_visual),
      n_query_(n_query),
      grid_rows_(grid_rows),
      grid_cols_(grid_cols) {
    if (n_visual == 0) {
        throw std::invalid_argument("TokenLayout: n_visual must be at least 1");
    }
    if (grid_rows * grid_cols != n_visual) {
        std::ostringstream msg;
        msg << "TokenLayout: grid " << grid_rows << "x" << grid_cols
            << " does not cover n_visual=" << n_visual;
        throw std::invalid_argument(msg.str());
    }
}

StepAttention::StepAttention(std::size_t step_index, std::size_t n_layers, std::size_t n_heads,
                             std::size_t n_keys, std::vector<double> values)
    : step_index_(step_index),
      n_layers_(n_layers),
      n_heads_(n_heads),
      n_keys_(n_keys),
      values_(std::move(values)) {
    if (n_layers == 0 || n_heads == 0 || n_keys == 0) {
        throw std::invalid_argument("StepAttention: dimensions must be nonzero");
    }
    if (values_.size() != n_layers * n_heads * n_keys) {
        std::ostringstream msg;
        msg << "StepAttention: expected " << n_layers * n_heads << " rows of " << n_keys
            << " keys, got " << values_.size() << " values";
        throw std::invalid_argument(msg.str());
    }
}

std::span<const double> StepAttention::row(std::size_t layer, std::size_t head) const {
    return std::span<const double>(values_).subspan((layer * n_heads_ + head) * n_keys_, n_keys_);
}

std::span<double> StepAttention::row(std::size_t layer, std::size_t head) {
    return std::span<double>(values_).subspan((layer * n_heads_ + head) * n_keys_, n_keys_);
}

std::span<const double> StepAttention::layer(std::size_t layer) const {
    return std::span<const double>(values_).subspan(layer * n_heads_ * n_keys_,
                                                    n_heads_ * n_keys_);
}

std::span<double> StepAttention::layer(std::size_t layer) {
    return std::span<double>(values_).subspan(layer * n_heads_ * n_keys_, n_heads_ * n_keys_);
}

AttentionTrace::AttentionTrace(TokenLayout layout, std::size_t n_layers, std::size_t n_heads,
                               std::vector<StepAttention> steps,
                               std::optional<std::vector<std::uint32_t>> token_ids)
    : layout_(layout),
      n_layers_(n_layers),
      n_heads_(n_heads),
      steps_(std::move(steps)),
      token_ids_(std::move(token_ids)) {
    if (n_layers == 0 || n_heads == 0) {
        throw std::invalid_argument("AttentionTrace: n_layers and n_heads must be nonzero");
    }
    for (const auto& step : steps_) {
        if (step.n_layers() != n_layers || step.n_heads() != n_heads) {
            std::ostringstream msg;
            msg << "AttentionTrace: step " << step.step_index() << " has " << step.n_layers()
                << "x" << step.n_heads() << " rows, trace declares " << n_layers << "x"
                << n_heads;
            throw std::invalid_argument(msg.str());
        }
    }
    if (token_ids_ && token_ids_->size() != steps_.size()) {
        throw std::invalid_argument("AttentionTrace: token_ids length differs from step count");
    }
}

SaliencyMap::SaliencyMap(std::vector<std::uint32_t> raw_counts, std::vector<double> normalized)
    : raw_counts_(std::move(raw_counts)), normalized_(std::move(normalized)) {
    if (raw_counts_.size() != normalized_.size()) {
        throw std::invalid_argument("SaliencyMap: raw and normalized lengths differ");
    }
    for (double v : normalized_) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("SaliencyMap: normalized value outside [0,1]");
        }
    }
}

void EnhancementConfig::validate() const {
    if (window_T == 0) throw std::invalid_argument("window_T must be at least 1");
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in (0,1]");
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be nonnegative");
    if (!(beta >= 0.0)) throw std::invalid_argument("beta must be nonnegative");
}

bool HeadSelection::contains(std::size_t layer, std::size_t head) const {
    const auto& heads = per_layer.at(layer);
    return std::binary_search(heads.begin(), heads.end(), head);
}

std::size_t head_set_size(std::size_t n_heads, double rho) {
    auto k = static_cast<std::size_t>(std::floor(rho * static_cast<double>(n_heads)));
    return std::clamp<std::size_t>(k, 1, n_heads);
}

std::vector<std::size_t> top_heads(std::span<const double> scores, double rho) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(head_set_size(scores.size(), rho));
    std::sort(order.begin(), order.end());
    return order;
}

double visual_mass(std::span<const double> row, const TokenLayout& layout) {
    double sum = 0.0;
    for (std::size_t j = layout.visual_begin(); j < layout.visual_end(); ++j) sum += row[j];
    return sum;
}

std::string to_string(Violation::Kind kind) {
    switch (kind) {
        case Violation::Kind::step_index: return "step_index";
        case Violation::Kind::key_length: return "key_length";
        case Violation::Kind::non_finite: return "non_finite";
        case Violation::Kind::negative_entry: return "negative_entry";
        case Violation::Kind::row_sum: return "row_sum";
    }
    return "unknown";
}

std::vector<Violation> validate_trace(const AttentionTrace& trace, double tolerance) {
    std::vector<Violation> report;
    const auto& layout = trace.layout();

    for (std::size_t t = 0; t < trace.n_steps(); ++t) {
        const auto& step = trace.step(t);
        if (step.step_index() != t) {
            std::ostringstream msg;
            msg << "step at position " << t << " carries step_index " << step.step_index();
            report.push_back({Violation::Kind::step_index, t, 0, 0, msg.str()});
        }
        if (step.n_keys() != layout.keys_at_step(t)) {
            std::ostringstream msg;
            msg << "step " << t << " has " << step.n_keys() << " keys, expected "
                << layout.keys_at_step(t);
            if (t > 0) {
                msg << " (previous step had " << trace.step(t - 1).n_keys() << ")";
            }
            report.push_back({Violation::Kind::key_length, t, 0, 0, msg.str()});
        }
        for (std::size_t l = 0; l < trace.n_layers(); ++l) {
            for (std::size_t h = 0; h < trace.n_heads(); ++h) {
                auto row = step.row(l, h);
                bool finite = true;
                bool negative = false;
                double sum = 0.0;
                for (double v : row) {
                    if (!std::isfinite(v)) finite = false;
                    if (v < 0.0) negative = true;
                    sum += v;
                }
                auto where = [&] {
                    std::ostringstream msg;
                    msg << "(step " << t << ", layer " << l << ", head " << h << ")";
                    return msg.str();
                };
                if (!finite) {
                    report.push_back({Violation::Kind::non_finite, t, l, h,
                                      "non-finite attention value at " + where()});
                    continue;
                }
                if (negative) {
                    report.push_back({Violation::Kind::negative_entry, t, l, h,
                                      "negative attention value at " + where()});
                }
                if (std::abs(sum - 1.0) > tolerance) {
                    std::ostringstream msg;
                    msg << "row sum " << sum << " at " << where();
                    report.push_back({Violation::Kind::row_sum, t, l, h, msg.str()});
                }
            }
        }
    }
    return report;
}

}  // namespace ilvad
