#pragma once

// exp() built only from IEEE-754 basic operations, so results are identical
// on every platform (libm implementations differ in the last ulp). Requires
// -ffp-contract=off. Error is within 2 ulp over the double range.

#include <cmath>
#include <limits>

namespace ilvad::detail {

inline double portable_exp(double x) {
    if (std::isnan(x)) return x;
    if (x > 709.782712893384) return std::numeric_limits<double>::infinity();
    if (x < -745.1332191019412) return 0.0;

    constexpr double kInvLn2 = 1.4426950408889634;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;  // upper 32 bits of ln 2
    constexpr double kLn2Lo = 1.90821492927058770002e-10;
    const double k = std::floor(x * kInvLn2 + 0.5);
    const double r = (x - k * kLn2Hi) - k * kLn2Lo;  // |r| <= 0.35

    // Taylor series to degree 13; truncation error < 1e-17 on |r| <= 0.35.
    double p = 1.0 / 6227020800.0;
    constexpr double kInvFactorial[] = {1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
                                        1.0 / 362880.0,    1.0 / 40320.0,    1.0 / 5040.0,
                                        1.0 / 720.0,       1.0 / 120.0,      1.0 / 24.0,
                                        1.0 / 6.0,         0.5,              1.0,
                                        1.0};
    for (double c : kInvFactorial) p = p * r + c;
    return std::ldexp(p, static_cast<int>(k));
}

}  // namespace ilvad::detail
