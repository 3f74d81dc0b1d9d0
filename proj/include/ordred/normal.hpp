#pragma once
#include <cmath>
#include <limits>
#include <boost/math/special_functions/erf.hpp>

namespace ordred {
namespace normal {

inline constexpr double inv_sqrt_2pi = 0.398942280401432677939946059934;
inline constexpr double log_sqrt_2pi = 0.918938533204672741780329736406;
inline constexpr double inf = std::numeric_limits<double>::infinity();

inline double pdf(double x)
{
    if (std::isinf(x)) return 0.0;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double log_pdf(double x)
{
    if (std::isinf(x)) return -inf;
    return -0.5 * x * x - log_sqrt_2pi;
}

inline double cdf(double x)
{
    return 0.5 * std::erfc(-x * M_SQRT1_2);
}

/// Upper tail 1 - Phi(x), accurate for large positive x.
inline double ccdf(double x)
{
    return 0.5 * std::erfc(x * M_SQRT1_2);
}

/// log(1 - Phi(x)). Falls back to the asymptotic Mills-ratio series once
/// erfc would underflow.
inline double log_ccdf(double x)
{
    if (x == inf) return -inf;
    if (x == -inf) return 0.0;
    if (x < 30.0) {
        return std::log(ccdf(x));
    }
    const double x2 = x * x;
    const double inv = 1.0 / x2;
    // 1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8
    const double series = 1.0 + inv * (-1.0 + inv * (3.0 + inv * (-15.0 + inv * 105.0)));
    return -0.5 * x2 - std::log(x) - log_sqrt_2pi + std::log(series);
}

inline double log_cdf(double x) { return log_ccdf(-x); }

inline double quantile(double p)
{
    if (p <= 0.0) return -inf;
    if (p >= 1.0) return inf;
    return -M_SQRT2 * boost::math::erfc_inv(2.0 * p);
}

/// Upper-tail quantile: returns x with 1 - Phi(x) = q.
inline double cquantile(double q)
{
    return -quantile(q);
}

/// log(Phi(b) - Phi(a)) for a < b, stable in both tails.
inline double log_mass(double a, double b)
{
    if (!(a < b)) return -inf;
    if (a >= 0.0) {
        // both in the upper tail: Q(a) - Q(b)
        const double la = log_ccdf(a);
        const double lb = log_ccdf(b);
        return la + std::log1p(-std::exp(lb - la));
    }
    if (b <= 0.0) {
        const double lb = log_cdf(b);
        const double la = log_cdf(a);
        return lb + std::log1p(-std::exp(la - lb));
    }
    // straddles zero: no cancellation problem
    return std::log1p(-(cdf(a) + ccdf(b)));
}

} // namespace normal
} // namespace ordred
