#include "ilvad/toy_decoder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ilvad/portable_math.hpp"
#include "ilvad/saliency.hpp"

namespace ilvad::toy {

namespace {

constexpr std::uint64_t kStreamStride = 0x9E3779B97F4A7C15ULL;
constexpr double kLayerNormEps = 1e-5;
constexpr double kPositionScale = 0.1;

enum Stream : std::uint64_t {
    kTokenEmbedding = 0,
    kPositionEmbedding = 1,
    kUnembedding = 2,
    kQueryDirection = 3,
    kEvidenceDirection = 4,
    kPromptTokens = 5,
    kImageNoise = 6,
    kFirstLayer = 16,  // layer l, matrix k -> kFirstLayer + 8 * l + k
};

class StreamRng {
public:
    StreamRng(std::uint64_t seed, std::uint64_t stream)
        : engine_(seed + (stream + 1) * kStreamStride) {}

    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    // [-1, 1)
    double symmetric() { return 2.0 * uniform() - 1.0; }
    std::uint64_t bits() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

// Uniform entries with variance scale^2.
Matrix random_matrix(std::size_t rows, std::size_t cols, double scale, std::uint64_t seed,
                     std::uint64_t stream) {
    StreamRng rng(seed, stream);
    Matrix m(rows, cols);
    const double half_width = std::sqrt(3.0) * scale;
    for (double& v : m.data) v = half_width * rng.symmetric();
    return m;
}

std::vector<double> zero_mean_unit(std::vector<double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double norm = 0.0;
    for (double& x : v) {
        x -= mean;
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

std::vector<double> random_direction(std::size_t d, std::uint64_t seed, std::uint64_t stream) {
    StreamRng rng(seed, stream);
    std::vector<double> v(d);
    for (double& x : v) x = rng.symmetric();
    return zero_mean_unit(std::move(v));
}

std::vector<double> layer_norm(std::span<const double> x) {
    const auto n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
    return out;
}

// y = x M
std::vector<double> vec_mat(std::span<const double> x, const Matrix& m) {
    std::vector<double> y(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double xr = x[r];
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols; ++c) y[c] += xr * row[c];
    }
    return y;
}

void add_fnv(std::uint64_t& hash, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
        hash ^= (bits >> (8 * i)) & 0xFF;
        hash *= 0x100000001B3ULL;
    }
}

void add_fnv(std::uint64_t& hash, const Matrix& m) {
    for (double v : m.data) add_fnv(hash, v);
}

}  // namespace

void ToyModelConfig::validate() const {
    if (n_layers == 0 || n_heads == 0 || d_model == 0 || max_positions == 0) {
        throw std::invalid_argument("toy model dimensions must be at least 1");
    }
    if (d_model % n_heads != 0) {
        throw std::invalid_argument("d_model must be divisible by n_heads");
    }
    if (vocab_size < 4) throw std::invalid_argument("vocab_size must be at least 4");
    if (d_model < 2) throw std::invalid_argument("d_model must be at least 2");
    if (!std::isfinite(evidence_gain)) throw std::invalid_argument("evidence_gain must be finite");
}

ToyModel init_model(const ToyModelConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    const auto seed = config.seed;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    ToyModel model;
    model.config = config;
    model.query_direction = random_direction(d, seed, kQueryDirection);
    {
        auto ev = random_direction(d, seed, kEvidenceDirection);
        double proj = 0.0;
        for (std::size_t i = 0; i < d; ++i) proj += ev[i] * model.query_direction[i];
        for (std::size_t i = 0; i < d; ++i) ev[i] -= proj * model.query_direction[i];
        model.evidence_direction = zero_mean_unit(std::move(ev));
    }

    model.token_embedding = random_matrix(config.vocab_size, d, 1.0, seed, kTokenEmbedding);
    const double text_alignment = std::sqrt(static_cast<double>(d));
    for (std::size_t v = 0; v < config.vocab_size; ++v) {
        for (std::size_t i = 0; i < d; ++i) {
            model.token_embedding(v, i) += text_alignment * model.query_direction[i];
        }
    }
    model.position_embedding =
        random_matrix(config.max_positions, d, kPositionScale, seed, kPositionEmbedding);
    model.unembedding = random_matrix(d, config.vocab_size, inv_sqrt_d, seed, kUnembedding);

    const std::size_t d_k = config.d_k();
    const std::size_t evidence_heads = (config.n_heads + 1) / 2;
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const std::uint64_t base = kFirstLayer + 8 * l;
        ToyLayer layer;
        layer.w_q = random_matrix(d, d, inv_sqrt_d, seed, base + 0);
        layer.w_k = random_matrix(d, d, inv_sqrt_d, seed, base + 1);
        layer.w_v = random_matrix(d, d, inv_sqrt_d, seed, base + 2);
        layer.w_o = random_matrix(d, d, inv_sqrt_d, seed, base + 3);
        layer.w_up = random_matrix(d, config.d_ff(), inv_sqrt_d, seed, base + 4);
        layer.w_down = random_matrix(config.d_ff(), d,
                                     1.0 / std::sqrt(static_cast<double>(config.d_ff())), seed,
                                     base + 5);

        const double depth = config.n_layers > 1
                                 ? static_cast<double>(l) / static_cast<double>(config.n_layers - 1)
                                 : 1.0;
        const double gain = config.evidence_gain * depth;
        for (std::size_t h = 0; h < evidence_heads; ++h) {
            const std::size_t col = h * d_k;
            for (std::size_t i = 0; i < d; ++i) {
                layer.w_q(i, col) += gain * model.query_direction[i];
                layer.w_k(i, col) += gain * model.evidence_direction[i];
            }
        }
        model.layers.push_back(std::move(layer));
    }
    return model;
}

std::uint64_t parameter_checksum(const ToyModel& model) {
    std::uint64_t hash = 0xCBF29CE484222325ULL;
    add_fnv(hash, model.token_embedding);
    add_fnv(hash, model.position_embedding);
    add_fnv(hash, model.unembedding);
    for (double v : model.query_direction) add_fnv(hash, v);
    for (double v : model.evidence_direction) add_fnv(hash, v);
    for (const auto& layer : model.layers) {
        for (const Matrix* m : {&layer.w_q, &layer.w_k, &layer.w_v, &layer.w_o, &layer.w_up,
                                &layer.w_down}) {
            add_fnv(hash, *m);
        }
    }
    return hash;
}

SyntheticImage make_synthetic_image(const ToyModel& model, std::size_t grid_rows,
                                    std::size_t grid_cols, std::vector<std::size_t> planted,
                                    std::uint64_t seed, double signature_strength) {
    if (grid_rows == 0 || grid_cols == 0) throw std::invalid_argument("empty patch grid");
    const std::size_t n = grid_rows * grid_cols;
    std::sort(planted.begin(), planted.end());
    planted.erase(std::unique(planted.begin(), planted.end()), planted.end());
    if (!planted.empty() && planted.back() >= n) {
        std::ostringstream msg;
        msg << "planted patch " << planted.back() << " outside a " << n << "-patch grid";
        throw std::invalid_argument(msg.str());
    }

    const std::size_t d = model.config.d_model;
    SyntheticImage image;
    image.grid_rows = grid_rows;
    image.grid_cols = grid_cols;
    image.patch_features = random_matrix(n, d, 1.0, seed, kImageNoise);
    const double magnitude = signature_strength * std::sqrt(static_cast<double>(d));
    for (std::size_t p : planted) {
        for (std::size_t i = 0; i < d; ++i) {
            image.patch_features(p, i) += magnitude * model.evidence_direction[i];
        }
    }
    image.planted_evidence = std::move(planted);
    return image;
}

TokenLayout Prompt::layout() const {
    return TokenLayout(system_tokens.size(), image.n_patches(), query_tokens.size(),
                       image.grid_rows, image.grid_cols);
}

Prompt default_prompt(const ToyModel& model, SyntheticImage image) {
    StreamRng rng(model.config.seed, kPromptTokens);
    Prompt prompt;
    prompt.system_tokens = {0, 1};
    for (int i = 0; i < 4; ++i) {
        prompt.query_tokens.push_back(static_cast<std::uint32_t>(rng.bits() % model.config.vocab_size));
    }
    prompt.image = std::move(image);
    return prompt;
}

EnhancementInterceptor::EnhancementInterceptor(TokenLayout layout, SaliencyMap saliency,
                                               EnhancementConfig config)
    : enhancer_(layout, std::move(saliency), config) {}

void EnhancementInterceptor::begin_position(std::size_t n_layers) { enhancer_.begin_step(n_layers); }

void EnhancementInterceptor::on_layer(std::size_t /*layer*/, std::span<double> rows,
                                      std::size_t n_heads, std::size_t n_keys) {
    enhancer_.enhance_layer(rows, n_heads, n_keys);
}

void EnhancementInterceptor::end_position() { enhancer_.end_step(); }

DecoderSession::DecoderSession(const ToyModel& model)
    : model_(&model), keys_(model.config.n_layers), values_(model.config.n_layers) {}

PositionOutput DecoderSession::push(std::span<const double> input_embedding,
                                    AttentionInterceptor* interceptor) {
    const auto& cfg = model_->config;
    const std::size_t d = cfg.d_model;
    const std::size_t d_k = cfg.d_k();
    const std::size_t n_heads = cfg.n_heads;
    if (input_embedding.size() != d) throw std::invalid_argument("embedding width != d_model");
    if (length_ >= cfg.max_positions) {
        std::ostringstream msg;
        msg << "sequence exceeds max_positions=" << cfg.max_positions;
        throw Error(msg.str());
    }

    const std::size_t n_keys = length_ + 1;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
    PositionOutput out;
    out.n_keys = n_keys;
    out.rows.assign(cfg.n_layers * n_heads * n_keys, 0.0);

    std::vector<double> x(input_embedding.begin(), input_embedding.end());
    if (interceptor) interceptor->begin_position(cfg.n_layers);

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& layer = model_->layers[l];
        const auto h = layer_norm(x);
        const auto q = vec_mat(h, layer.w_q);
        auto& keys = keys_[l];
        auto& values = values_[l];
        const auto k = vec_mat(h, layer.w_k);
        const auto v = vec_mat(h, layer.w_v);
        keys.insert(keys.end(), k.begin(), k.end());
        values.insert(values.end(), v.begin(), v.end());

        std::span<double> rows(out.rows.data() + l * n_heads * n_keys, n_heads * n_keys);
        for (std::size_t head = 0; head < n_heads; ++head) {
            auto row = rows.subspan(head * n_keys, n_keys);
            double peak = -INFINITY;
            for (std::size_t j = 0; j < n_keys; ++j) {
                double dot = 0.0;
                for (std::size_t c = head * d_k; c < (head + 1) * d_k; ++c) {
                    dot += q[c] * keys[j * d + c];
                }
                row[j] = dot * scale;
                peak = std::max(peak, row[j]);
            }
            double sum = 0.0;
            for (double& a : row) {
                a = detail::portable_exp(a - peak);
                sum += a;
            }
            for (double& a : row) a /= sum;
        }

        if (interceptor) interceptor->on_layer(l, rows, n_heads, n_keys);

        std::vector<double> mixed(d, 0.0);
        for (std::size_t head = 0; head < n_heads; ++head) {
            auto row = rows.subspan(head * n_keys, n_keys);
            for (std::size_t j = 0; j < n_keys; ++j) {
                for (std::size_t c = head * d_k; c < (head + 1) * d_k; ++c) {
                    mixed[c] += row[j] * values[j * d + c];
                }
            }
        }
        const auto attn = vec_mat(mixed, layer.w_o);
        for (std::size_t i = 0; i < d; ++i) x[i] += attn[i];

        auto up = vec_mat(layer_norm(x), layer.w_up);
        for (double& u : up) u = std::max(u, 0.0);
        const auto down = vec_mat(up, layer.w_down);
        for (std::size_t i = 0; i < d; ++i) x[i] += down[i];
    }

    if (interceptor) interceptor->end_position();
    out.logits = vec_mat(layer_norm(x), model_->unembedding);
    ++length_;
    return out;
}

std::vector<double> embed_token(const ToyModel& model, std::uint32_t token, std::size_t position) {
    if (token >= model.config.vocab_size) {
        std::ostringstream msg;
        msg << "token id " << token << " outside vocabulary of " << model.config.vocab_size;
        throw std::invalid_argument(msg.str());
    }
    if (position >= model.config.max_positions) {
        throw Error("sequence exceeds max_positions");
    }
    std::vector<double> e(model.token_embedding.row(token).begin(),
                          model.token_embedding.row(token).end());
    const auto pos = model.position_embedding.row(position);
    for (std::size_t i = 0; i < e.size(); ++i) e[i] += pos[i];
    return e;
}

std::vector<std::vector<double>> embed_prompt(const ToyModel& model, const Prompt& prompt) {
    const std::size_t d = model.config.d_model;
    if (prompt.image.patch_features.cols != d ||
        prompt.image.patch_features.rows != prompt.image.n_patches()) {
        throw std::invalid_argument("image features do not match the model width");
    }
    std::vector<std::vector<double>> out;
    std::size_t position = 0;
    for (auto t : prompt.system_tokens) out.push_back(embed_token(model, t, position++));
    for (std::size_t p = 0; p < prompt.image.n_patches(); ++p) {
        if (position >= model.config.max_positions) throw Error("sequence exceeds max_positions");
        const auto feat = prompt.image.patch_features.row(p);
        const auto pos = model.position_embedding.row(position++);
        std::vector<double> e(d);
        for (std::size_t i = 0; i < d; ++i) e[i] = feat[i] + pos[i];
        out.push_back(std::move(e));
    }
    for (auto t : prompt.query_tokens) out.push_back(embed_token(model, t, position++));
    return out;
}

ForwardResult forward_step(const ToyModel& model, const Prompt& prompt,
                           std::span<const std::uint32_t> generated,
                           AttentionInterceptor* interceptor) {
    const auto inputs = embed_prompt(model, prompt);
    const std::size_t total = inputs.size() + generated.size();
    if (total > model.config.max_positions) throw Error("sequence exceeds max_positions");

    DecoderSession session(model);
    PositionOutput last;
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        const bool is_last = p + 1 == total;
        last = session.push(inputs[p], is_last ? interceptor : nullptr);
    }
    for (std::size_t g = 0; g < generated.size(); ++g) {
        const bool is_last = g + 1 == generated.size();
        last = session.push(embed_token(model, generated[g], inputs.size() + g),
                            is_last ? interceptor : nullptr);
    }
    const std::size_t step_index = generated.empty() ? 0 : generated.size() - 1;
    return {std::move(last.logits),
            StepAttention(step_index, model.config.n_layers, model.config.n_heads, last.n_keys,
                          std::move(last.rows))};
}

std::uint32_t argmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("argmax of empty logits");
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return static_cast<std::uint32_t>(best);
}

namespace {

struct PassOutput {
    std::vector<std::uint32_t> tokens;
    AttentionTrace trace;
};

PassOutput greedy_pass(const ToyModel& model, const Prompt& prompt, std::size_t n_steps,
                       AttentionInterceptor* interceptor) {
    const auto layout = prompt.layout();
    const auto inputs = embed_prompt(model, prompt);
    if (inputs.size() + n_steps > model.config.max_positions) {
        throw Error("sequence exceeds max_positions");
    }

    DecoderSession session(model);
    PositionOutput out;
    for (const auto& e : inputs) out = session.push(e, nullptr);

    std::vector<std::uint32_t> tokens;
    std::vector<StepAttention> steps;
    tokens.push_back(argmax(out.logits));
    for (std::size_t t = 0; t < n_steps; ++t) {
        out = session.push(embed_token(model, tokens[t], layout.n_input() + t), interceptor);
        steps.emplace_back(t, model.config.n_layers, model.config.n_heads, out.n_keys,
                           std::move(out.rows));
        if (t + 1 < n_steps) tokens.push_back(argmax(out.logits));
    }
    AttentionTrace trace(layout, model.config.n_layers, model.config.n_heads, std::move(steps),
                         tokens);
    return {std::move(tokens), std::move(trace)};
}

}  // namespace

GenerationResult generate(const ToyModel& model, const Prompt& prompt, std::size_t n_steps,
                          Mode mode, const EnhancementConfig& config) {
    if (n_steps == 0) throw std::invalid_argument("n_steps must be at least 1");
    if (mode == Mode::baseline) {
        auto pass = greedy_pass(model, prompt, n_steps, nullptr);
        return {std::move(pass.tokens), std::move(pass.trace), std::nullopt};
    }

    config.validate();
    const auto probe = greedy_pass(model, prompt, std::min(config.window_T, n_steps), nullptr);
    auto saliency = build_saliency(probe.trace, config);

    EnhancementInterceptor interceptor(prompt.layout(), saliency, config);
    auto pass = greedy_pass(model, prompt, n_steps, &interceptor);
    return {std::move(pass.tokens), std::move(pass.trace), std::move(saliency)};
}

}  // namespace ilvad::toy
