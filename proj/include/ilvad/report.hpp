#pragma once

// Text and image artifacts produced by the command line tool.
//
// Saliency file (text, '\n' line endings):
//   ILVAD-SALIENCY 1
//   raw: <count> <count> ...
//   norm: <decimal> <decimal> ...      (9 significant digits)

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ilvad/types.hpp"

namespace ilvad::report {

class FormatError : public std::runtime_error {
public:
    FormatError(std::size_t offset, const std::string& what)
        : std::runtime_error(what), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// Shortest round-trip-safe rendering at 9 significant digits, locale free.
std::string format_decimal(double v);

std::string format_saliency(const SaliencyMap& saliency);

// The normalized map is rebuilt from the raw counts; the norm: line must
// agree with it to 1e-8.
SaliencyMap parse_saliency(std::string_view text);

// Binary PGM (P5), maxval 255, pixel = round(255 * S_hat), row-major.
std::vector<std::uint8_t> render_pgm(const SaliencyMap& saliency, std::size_t grid_rows,
                                     std::size_t grid_cols);

// Mean over layers (and over the heads `heads` selects in each layer) of the
// attention a row puts on the visual tokens in `visual_indices`.
double mass_on(const StepAttention& step, const TokenLayout& layout,
               std::span<const std::size_t> visual_indices, const HeadSelection& heads);

// Visual indices with S_hat > 0.
std::vector<std::size_t> evidence_tokens(const SaliencyMap& saliency);

// Per step: mass_on(evidence_tokens) over that step's evidence heads H_e.
std::vector<double> evidence_mass(const AttentionTrace& trace, const SaliencyMap& saliency,
                                  double rho);

// Per step: mass_on(patches) over that step's evidence heads H_e.
std::vector<double> patch_mass(const AttentionTrace& trace, const SaliencyMap& saliency,
                               std::span<const std::size_t> patches, double rho);

struct Comparison {
    std::vector<double> baseline;
    std::vector<double> ilvad;
    double baseline_mean = 0.0;
    double ilvad_mean = 0.0;
};

// Over the steps both traces have. Throws std::invalid_argument when the
// traces' layouts or shapes differ.
Comparison compare_traces(const AttentionTrace& baseline, const AttentionTrace& ilvad,
                          const SaliencyMap& saliency, double rho = 0.5);

// Tab-separated: header "step baseline ilvad delta", one line per step, then
// a "mean" line. delta = ilvad - baseline.
std::string format_comparison(const Comparison& comparison);

}  // namespace ilvad::report
