#include "ilvad/report.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "ilvad/enhancement.hpp"
#include "ilvad/saliency.hpp"

namespace ilvad::report {

namespace {

constexpr std::string_view kSaliencyHeader = "ILVAD-SALIENCY 1";
constexpr double kNormSlack = 1e-8;

struct Line {
    std::string_view text;
    std::size_t offset;
};

std::vector<Line> split_lines(std::string_view text) {
    std::vector<Line> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        lines.push_back({text.substr(start, end - start), start});
        start = end + 1;
    }
    return lines;
}

// Tokens after a "key:" prefix, with their offsets.
std::vector<Line> fields(const Line& line, std::string_view key) {
    if (line.text.substr(0, key.size()) != key) {
        throw FormatError(line.offset, "expected line starting with '" + std::string(key) + "'");
    }
    std::vector<Line> out;
    std::size_t i = key.size();
    while (i < line.text.size()) {
        while (i < line.text.size() && line.text[i] == ' ') ++i;
        std::size_t j = i;
        while (j < line.text.size() && line.text[j] != ' ') ++j;
        if (j > i) out.push_back({line.text.substr(i, j - i), line.offset + i});
        i = j;
    }
    return out;
}

template <typename T>
T parse_number(const Line& token) {
    T value{};
    const char* first = token.text.data();
    const char* last = first + token.text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw FormatError(token.offset, "malformed number '" + std::string(token.text) + "'");
    }
    return value;
}

}  // namespace

std::string format_decimal(double v) {
    if (v == 0.0) return "0";  // also folds -0
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
    return std::string(buf, ptr);
}

std::string format_saliency(const SaliencyMap& saliency) {
    std::string out(kSaliencyHeader);
    out += "\nraw:";
    for (auto c : saliency.raw_counts()) out += " " + std::to_string(c);
    out += "\nnorm:";
    for (double v : saliency.normalized()) out += " " + format_decimal(v);
    out += "\n";
    return out;
}

SaliencyMap parse_saliency(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty() || lines[0].text != kSaliencyHeader) {
        throw FormatError(0, "missing '" + std::string(kSaliencyHeader) + "' header");
    }
    if (lines.size() < 3) {
        throw FormatError(text.size(), "saliency file ends before the norm: line");
    }
    if (lines.size() > 3) throw FormatError(lines[3].offset, "unexpected trailing content");

    std::vector<std::uint32_t> raw;
    for (const auto& tok : fields(lines[1], "raw:")) raw.push_back(parse_number<std::uint32_t>(tok));
    const auto norm_tokens = fields(lines[2], "norm:");
    if (raw.empty()) throw FormatError(lines[1].offset, "empty saliency map");
    if (norm_tokens.size() != raw.size()) {
        std::ostringstream msg;
        msg << "raw: has " << raw.size() << " entries, norm: has " << norm_tokens.size();
        throw FormatError(lines[2].offset, msg.str());
    }

    auto saliency = normalize_saliency(raw);
    for (std::size_t j = 0; j < raw.size(); ++j) {
        const double printed = parse_number<double>(norm_tokens[j]);
        if (!(std::abs(printed - saliency.normalized()[j]) <= kNormSlack)) {
            std::ostringstream msg;
            msg << "norm: entry " << j << " (" << norm_tokens[j].text
                << ") disagrees with raw counts";
            throw FormatError(norm_tokens[j].offset, msg.str());
        }
    }
    return saliency;
}

std::vector<std::uint8_t> render_pgm(const SaliencyMap& saliency, std::size_t grid_rows,
                                     std::size_t grid_cols) {
    if (grid_rows * grid_cols != saliency.size()) {
        std::ostringstream msg;
        msg << "grid " << grid_rows << "x" << grid_cols << " does not match " << saliency.size()
            << " saliency entries";
        throw std::invalid_argument(msg.str());
    }
    const std::string header =
        "P5\n" + std::to_string(grid_cols) + " " + std::to_string(grid_rows) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (double v : saliency.normalized()) {
        out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v)));
    }
    return out;
}

double mass_on(const StepAttention& step, const TokenLayout& layout,
               std::span<const std::size_t> visual_indices, const HeadSelection& heads) {
    double total = 0.0;
    for (std::size_t l = 0; l < step.n_layers(); ++l) {
        const auto& layer_heads = heads.per_layer.at(l);
        double layer_sum = 0.0;
        for (std::size_t h : layer_heads) {
            const auto row = step.row(l, h);
            for (std::size_t j : visual_indices) layer_sum += row[layout.visual_begin() + j];
        }
        total += layer_sum / static_cast<double>(layer_heads.size());
    }
    return total / static_cast<double>(step.n_layers());
}

std::vector<std::size_t> evidence_tokens(const SaliencyMap& saliency) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < saliency.size(); ++j) {
        if (saliency.normalized()[j] > 0.0) out.push_back(j);
    }
    return out;
}

std::vector<double> patch_mass(const AttentionTrace& trace, const SaliencyMap& saliency,
                               std::span<const std::size_t> patches, double rho) {
    for (std::size_t p : patches) {
        if (p >= trace.layout().n_visual()) throw std::invalid_argument("patch index out of range");
    }
    std::vector<double> out;
    out.reserve(trace.n_steps());
    for (const auto& step : trace.steps()) {
        const auto heads = select_evidence_heads(step, trace.layout(), saliency, rho);
        out.push_back(mass_on(step, trace.layout(), patches, heads));
    }
    return out;
}

std::vector<double> evidence_mass(const AttentionTrace& trace, const SaliencyMap& saliency,
                                  double rho) {
    const auto tokens = evidence_tokens(saliency);
    return patch_mass(trace, saliency, tokens, rho);
}

Comparison compare_traces(const AttentionTrace& baseline, const AttentionTrace& ilvad,
                          const SaliencyMap& saliency, double rho) {
    if (!(baseline.layout() == ilvad.layout()) || baseline.n_layers() != ilvad.n_layers() ||
        baseline.n_heads() != ilvad.n_heads()) {
        throw std::invalid_argument("traces differ in layout or shape");
    }
    if (saliency.size() != baseline.layout().n_visual()) {
        throw std::invalid_argument("saliency map length differs from the traces' n_visual");
    }
    Comparison c;
    c.baseline = evidence_mass(baseline, saliency, rho);
    c.ilvad = evidence_mass(ilvad, saliency, rho);
    const std::size_t n = std::min(c.baseline.size(), c.ilvad.size());
    c.baseline.resize(n);
    c.ilvad.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        c.baseline_mean += c.baseline[t];
        c.ilvad_mean += c.ilvad[t];
    }
    if (n > 0) {
        c.baseline_mean /= static_cast<double>(n);
        c.ilvad_mean /= static_cast<double>(n);
    }
    return c;
}

std::string format_comparison(const Comparison& c) {
    std::string out = "step\tbaseline\tilvad\tdelta\n";
    for (std::size_t t = 0; t < c.baseline.size(); ++t) {
        out += std::to_string(t) + "\t" + format_decimal(c.baseline[t]) + "\t" +
               format_decimal(c.ilvad[t]) + "\t" + format_decimal(c.ilvad[t] - c.baseline[t]) +
               "\n";
    }
    out += "mean\t" + format_decimal(c.baseline_mean) + "\t" + format_decimal(c.ilvad_mean) +
           "\t" + format_decimal(c.ilvad_mean - c.baseline_mean) + "\n";
    return out;
}

}  // namespace ilvad::report
