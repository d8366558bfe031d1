#pragma once

// Standard normal helpers that stay finite deep in the tails.

#include <cmath>
#include <limits>
#include <numbers>

namespace lmabo::normal {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

inline double pdf(double z) { return std::exp(-0.5 * z * z - kLogSqrt2Pi); }

inline double log_pdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }

inline double cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

/// log Phi(z). Uses the asymptotic Mills-ratio series below z = -20 where erfc underflows.
inline double log_cdf(double z) {
    if (z > 6.0) return std::log1p(-0.5 * std::erfc(z * kInvSqrt2));
    if (z > -20.0) return std::log(0.5 * std::erfc(-z * kInvSqrt2));
    // Phi(z) = phi(z)/|z| * (1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8 - ...)
    const double x2 = z * z;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k <= 8; ++k) {
        term *= -(2.0 * k - 1.0) / x2;
        sum += term;
    }
    return log_pdf(z) - std::log(-z) + std::log(sum);
}

/// Upper-tail Mills ratio m(x) = (1 - Phi(x)) / phi(x) for x >= 0, via Lentz continued fraction.
inline double mills_ratio(double x) {
    if (x < 3.0) return (0.5 * std::erfc(x * kInvSqrt2)) / pdf(x);
    // m(x) = 1/(x + 1/(x + 2/(x + 3/(x + ...))))
    constexpr double tiny = 1e-300;
    double f = x, c = x, d = 0.0;
    for (int k = 1; k < 500; ++k) {
        d = x + k * d;
        if (std::abs(d) < tiny) d = tiny;
        c = x + k / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = c * d;
        f *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return 1.0 / f;
}

/// log h(z) with h(z) = phi(z) + z Phi(z), the standardized expected improvement.
inline double log_h(double z) {
    if (z > -1.0) return std::log(pdf(z) + z * cdf(z));
    const double x = -z;
    // h(z) = phi(x) * (1 - x m(x)); 1 - x m(x) ~ 1/x^2 - 3/x^4 + 15/x^6 - ...
    double tail;
    if (x > 100.0) {
        const double inv2 = 1.0 / (x * x);
        double term = inv2, sum = 0.0;
        for (int k = 1; k <= 6; ++k) {
            sum += term;
            term *= -(2.0 * k + 1.0) * inv2;
        }
        tail = sum;
    } else {
        tail = 1.0 - x * mills_ratio(x);
    }
    return log_pdf(z) + std::log(tail);
}

}  // namespace lmabo::normal
