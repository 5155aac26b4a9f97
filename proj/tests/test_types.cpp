#include <gtest/gtest.h>

#include <cmath>

#include "ilvad/portable_math.hpp"
#include "ilvad/types.hpp"
#include "support.hpp"

using namespace ilvad;

namespace {

TokenLayout small_layout() { return TokenLayout(1, 2, 1, 1, 2); }  // n_input = 4

StepAttention uniform_step(std::size_t t, std::size_t L, std::size_t H, std::size_t n_keys) {
    return StepAttention(t, L, H, n_keys, std::vector<double>(L * H * n_keys, 1.0 / n_keys));
}

}  // namespace

TEST(TokenLayout, SpansAreContiguous) {
    TokenLayout layout(2, 6, 3, 2, 3);
    EXPECT_EQ(layout.visual_begin(), 2u);
    EXPECT_EQ(layout.visual_end(), 8u);
    EXPECT_EQ(layout.n_input(), 11u);
    EXPECT_EQ(layout.keys_at_step(0), 12u);
    EXPECT_EQ(layout.keys_at_step(3), 15u);
}

TEST(TokenLayout, RejectsBadGridAndEmptyVisual) {
    EXPECT_THROW(TokenLayout(0, 0, 0, 0, 0), std::invalid_argument);
    EXPECT_THROW(TokenLayout(0, 6, 0, 2, 2), std::invalid_argument);
    EXPECT_NO_THROW(TokenLayout(0, 1, 0, 1, 1));
}

TEST(StepAttention, RejectsRowCountMismatch) {
    EXPECT_THROW(StepAttention(0, 2, 2, 3, std::vector<double>(11, 0.0)), std::invalid_argument);
    StepAttention step(0, 2, 2, 3, std::vector<double>(12, 0.0));
    step.row(1, 0)[2] = 7.0;
    EXPECT_EQ(step.values()[2 * 3 + 2], 7.0);
    EXPECT_EQ(step.layer(1).size(), 6u);
}

TEST(AttentionTrace, RejectsStepShapeAndTokenIdMismatch) {
    const auto layout = small_layout();
    std::vector<StepAttention> steps{uniform_step(0, 2, 3, 5)};
    EXPECT_THROW(AttentionTrace(layout, 2, 2, steps), std::invalid_argument);
    EXPECT_THROW(AttentionTrace(layout, 2, 3, steps, std::vector<std::uint32_t>{1, 2}),
                 std::invalid_argument);
    EXPECT_NO_THROW(AttentionTrace(layout, 2, 3, steps, std::vector<std::uint32_t>{1}));
}

TEST(SaliencyMap, RejectsLengthMismatchAndOutOfRange) {
    EXPECT_THROW(SaliencyMap({1, 2}, {0.5}), std::invalid_argument);
    EXPECT_THROW(SaliencyMap({1}, {1.5}), std::invalid_argument);
    EXPECT_NO_THROW(SaliencyMap({0, 2}, {0.0, 1.0}));
}

TEST(EnhancementConfig, DefaultsAndValidation) {
    EnhancementConfig c;
    EXPECT_EQ(c.window_T, 10u);
    EXPECT_EQ(c.tau, 5.0);
    EXPECT_EQ(c.alpha, 5.0);
    EXPECT_EQ(c.beta, 1.0);
    EXPECT_EQ(c.rho, 0.5);
    EXPECT_TRUE(c.enable_visual && c.enable_text);
    EXPECT_NO_THROW(c.validate());

    auto bad = c;
    bad.tau = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = c;
    bad.rho = 1.5;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = c;
    bad.rho = 0.0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = c;
    bad.window_T = 0;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
    bad = c;
    bad.rho = 1.0;
    EXPECT_NO_THROW(bad.validate());
}

TEST(HeadSelection, SizeIsFloorWithFloorOfOne) {
    EXPECT_EQ(head_set_size(4, 0.5), 2u);
    EXPECT_EQ(head_set_size(5, 0.5), 2u);
    EXPECT_EQ(head_set_size(1, 0.5), 1u);
    EXPECT_EQ(head_set_size(3, 0.1), 1u);
    EXPECT_EQ(head_set_size(3, 1.0), 3u);
}

TEST(HeadSelection, TopHeadsBreaksTiesTowardLowerIndex) {
    const std::vector<double> a{0.1, 0.4, 0.3, 0.2};
    EXPECT_EQ(top_heads(a, 0.5), (std::vector<std::size_t>{1, 2}));
    const std::vector<double> tie{0.5, 0.5};
    EXPECT_EQ(top_heads(tie, 0.5), (std::vector<std::size_t>{0}));
    const std::vector<double> tie3{0.2, 0.7, 0.7, 0.7};
    EXPECT_EQ(top_heads(tie3, 0.5), (std::vector<std::size_t>{1, 2}));
}

TEST(ValidateTrace, WellFormedTwoStepTraceIsClean) {
    const auto layout = small_layout();
    AttentionTrace trace(layout, 2, 2, {uniform_step(0, 2, 2, 5), uniform_step(1, 2, 2, 6)});
    EXPECT_TRUE(validate_trace(trace).empty());
}

TEST(ValidateTrace, ReportsRowSumWithCoordinates) {
    const auto layout = small_layout();
    auto bad = uniform_step(1, 2, 2, 6);
    for (double& v : bad.row(1, 0)) v *= 0.5;
    AttentionTrace trace(layout, 2, 2, {uniform_step(0, 2, 2, 5), bad});
    const auto report = validate_trace(trace);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_EQ(report[0].kind, Violation::Kind::row_sum);
    EXPECT_EQ(report[0].step, 1u);
    EXPECT_EQ(report[0].layer, 1u);
    EXPECT_EQ(report[0].head, 0u);
    EXPECT_NE(report[0].message.find("layer 1"), std::string::npos);
}

TEST(ValidateTrace, ReportsKeyLengthGap) {
    const auto layout = small_layout();
    // key lengths (n, n+2) instead of (n, n+1)
    AttentionTrace trace(layout, 1, 1, {uniform_step(0, 1, 1, 5), uniform_step(1, 1, 1, 7)});
    const auto report = validate_trace(trace);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_EQ(report[0].kind, Violation::Kind::key_length);
    EXPECT_EQ(report[0].step, 1u);
    EXPECT_NE(report[0].message.find("previous step had 5"), std::string::npos);
}

TEST(ValidateTrace, ReportsNegativeNonFiniteAndStepIndex) {
    const auto layout = small_layout();
    auto neg = uniform_step(0, 1, 2, 5);
    neg.row(0, 1)[0] = -0.2;
    neg.row(0, 1)[1] += 0.4;
    auto nan = uniform_step(1, 1, 2, 6);
    nan.row(0, 0)[3] = std::nan("");
    auto misnumbered = uniform_step(5, 1, 2, 7);
    AttentionTrace trace(layout, 1, 2, {neg, nan, misnumbered});
    const auto report = validate_trace(trace);
    ASSERT_EQ(report.size(), 3u);
    EXPECT_EQ(report[0].kind, Violation::Kind::negative_entry);
    EXPECT_EQ(report[0].head, 1u);
    EXPECT_EQ(report[1].kind, Violation::Kind::non_finite);
    EXPECT_EQ(report[2].kind, Violation::Kind::step_index);
}

TEST(ValidateTrace, ToleranceSeparatesIngestAndRenorm) {
    const auto layout = small_layout();
    auto step = uniform_step(0, 1, 1, 5);
    step.row(0, 0)[0] += 5e-5;
    AttentionTrace trace(layout, 1, 1, {step});
    EXPECT_TRUE(validate_trace(trace, kIngestTolerance).empty());
    EXPECT_EQ(validate_trace(trace, kRenormTolerance).size(), 1u);
}

TEST(ValidateTrace, IdempotentAndPure) {
    fixtures::Rng rng(7);
    const auto layout = fixtures::random_layout(rng);
    const auto trace = fixtures::random_trace(rng, layout, 3, 2, 4);
    const auto copy = trace;
    const auto first = validate_trace(trace);
    const auto second = validate_trace(trace);
    EXPECT_EQ(first.size(), second.size());
    EXPECT_TRUE(first.empty());
    EXPECT_EQ(trace, copy);
}

TEST(PortableExp, WithinTwoUlpOfLibm) {
    fixtures::Rng rng(8);
    for (int i = 0; i < 200000; ++i) {
        const double x = rng.uniform(-740.0, 709.0);
        const double a = detail::portable_exp(x);
        const double b = std::exp(x);
        ASSERT_LE(std::abs(a - b), 2.0 * (std::nextafter(b, INFINITY) - b)) << x;
    }
    EXPECT_EQ(detail::portable_exp(0.0), 1.0);
    EXPECT_EQ(detail::portable_exp(-800.0), 0.0);
    EXPECT_TRUE(std::isinf(detail::portable_exp(800.0)));
    EXPECT_TRUE(std::isnan(detail::portable_exp(std::nan(""))));
}
