#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <numeric>
#include <vector>
#include <ordred/error.hpp>
#include <ordred/linalg.hpp>
#include <ordred/model.hpp>
#include <ordred/normal.hpp>
#include <ordred/rng.hpp>

namespace ordred {
namespace tmvn {

struct Moments1d
{
    double mean;
    double second;
    /// (phi(lo) - phi(hi)) / (Phi(hi) - Phi(lo)) on the standardized scale
    double a;
    /// (lo phi(lo) - hi phi(hi)) / (Phi(hi) - Phi(lo))
    double b;
};

/**
 * First and second moments of N(mu, sd^2) truncated to [lo, hi).
 *
 * The normalizing mass and both Mills-type ratios are evaluated in the log
 * domain, so cells far in a tail stay finite. Throws NumericalError("EmptyCell")
 * when even the log-domain mass is not representable.
 */
inline Moments1d trunc_moments_1d(double mu, double sd, double lo, double hi)
{
    if (!(sd > 0.0) || !(lo < hi)) {
        detail::fail_numerical("EmptyCell", "invalid truncation interval or scale");
    }
    const double al = (lo - mu) / sd;
    const double be = (hi - mu) / sd;
    const double log_z = normal::log_mass(al, be);
    if (!std::isfinite(log_z)) {
        detail::fail_numerical("EmptyCell", "cell probability underflows");
    }
    const double ra = std::isinf(al) ? 0.0 : std::exp(normal::log_pdf(al) - log_z);
    const double rb = std::isinf(be) ? 0.0 : std::exp(normal::log_pdf(be) - log_z);
    const double a = ra - rb;
    const double b = (std::isinf(al) ? 0.0 : al * ra) - (std::isinf(be) ? 0.0 : be * rb);
    const double mean = mu + sd * a;
    // mu^2 + sd^2 + 2 a mu sd + b sd^2, arranged as mean^2 + variance
    const double var = sd * sd * std::max(1.0 + b - a * a, 0.0);
    return {mean, mean * mean + var, a, b};
}

enum class Method { approximate, exact_qmc, exact_rejection };

inline const char* to_string(Method m)
{
    switch (m) {
        case Method::approximate: return "approximate";
        case Method::exact_qmc: return "exact-qmc";
        case Method::exact_rejection: return "exact-rejection";
    }
    return "?";
}

/// E(z_j | x, y) and E(z_j^2 | x, y), plus the full second-moment matrix for exact backends.
struct ConditionalMoments
{
    Vec m;
    Vec s2;
    Method method = Method::approximate;
    /// E(z z^T | cell); empty for the approximate backend (product rule off the diagonal)
    Mat second;
    /// Monte Carlo standard errors of m and s2 (exact backends only)
    Vec m_se;
    Vec s2_se;
    bool converged = true;
    int sweeps = 0;

    /// Second-moment matrix used in S: exact when sampled, else m m^T with s2 on the diagonal.
    Mat second_moment() const
    {
        if (second.size() > 0) return second;
        Mat out = m * m.transpose();
        out.diagonal() = s2;
        return out;
    }
};

/**
 * Conditional-regression structure of N(., Delta): z_j | z_-j has mean
 * mu_j + sum_k weights(j,k) (z_k - mu_k) and standard deviation sd(j).
 */
struct ConditionalStructure
{
    Mat weights;
    Vec sd;
    /// marginal variances Delta_jj
    Vec var;

    static ConditionalStructure from_covariance(const Mat& delta)
    {
        const Mat prec = linalg::spd_inverse(delta);
        const Eigen::Index p = delta.rows();
        ConditionalStructure cs{Mat::Zero(p, p), Vec(p), delta.diagonal()};
        for (Eigen::Index j = 0; j < p; ++j) {
            const double pjj = prec(j, j);
            cs.sd(j) = 1.0 / std::sqrt(pjj);
            for (Eigen::Index k = 0; k < p; ++k) {
                if (k != j) cs.weights(j, k) = -prec(j, k) / pjj;
            }
        }
        return cs;
    }
};

struct ApproxOptions
{
    double tol = 1e-6;
    int max_sweeps = 50;
};

/// Finite starting point inside [lo, hi): the midpoint, or one unit inside a finite bound.
inline double clamped_midpoint(double lo, double hi, double fallback)
{
    const bool flo = std::isfinite(lo), fhi = std::isfinite(hi);
    if (flo && fhi) return 0.5 * (lo + hi);
    if (flo) return lo + 1.0;
    if (fhi) return hi - 1.0;
    return fallback;
}

/**
 * Approximate cell-conditional moments by Gauss-Seidel sweeps of the
 * coordinate-wise truncated-normal recursion.
 *
 * Each coordinate uses the conditional mean mu~_j evaluated at the current
 * E(z_-j | x) and the delta-method plug-in of the truncation ratios at that
 * point. Cross moments factorize, so the spread of mu~_j only picks up the
 * diagonal variances s2_k - m_k^2.
 */
inline ConditionalMoments approx_moments(const Rectangle& cell, const Vec& mean,
                                         const ConditionalStructure& cs,
                                         const ApproxOptions& opts = {})
{
    const Eigen::Index p = mean.size();
    ConditionalMoments out;
    out.method = Method::approximate;
    out.m.resize(p);
    out.s2.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        out.m(j) = clamped_midpoint(cell.lower(j), cell.upper(j), mean(j));
        out.s2(j) = out.m(j) * out.m(j);
    }
    Vec dev = out.m - mean;
    Vec var = Vec::Zero(p);
    out.converged = false;
    for (int sweep = 1; sweep <= opts.max_sweeps; ++sweep) {
        double change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            double shift = 0.0, spread = 0.0;
            for (Eigen::Index k = 0; k < p; ++k) {
                const double w = cs.weights(j, k);
                shift += w * dev(k);
                spread += w * w * var(k);
            }
            const double mu_c = mean(j) + shift;
            const Moments1d t = trunc_moments_1d(mu_c, cs.sd(j), cell.lower(j), cell.upper(j));
            // The diagonal-only spread can feed on itself and diverge. A Gaussian
            // restricted to a box has Var(z_j) <= Delta_jj and <= width^2 / 4.
            double cap = cs.var(j);
            if (std::isfinite(cell.lower(j)) && std::isfinite(cell.upper(j))) {
                const double w = cell.upper(j) - cell.lower(j);
                cap = std::min(cap, 0.25 * w * w);
            }
            const double v = std::min(t.second - t.mean * t.mean + spread, cap);
            const double s2_new = t.mean * t.mean + std::max(v, 0.0);
            change = std::max({change, std::abs(t.mean - out.m(j)), std::abs(s2_new - out.s2(j))});
            out.m(j) = t.mean;
            out.s2(j) = s2_new;
            dev(j) = t.mean - mean(j);
            var(j) = std::max(s2_new - t.mean * t.mean, 0.0);
        }
        out.sweeps = sweep;
        if (change < opts.tol) {
            out.converged = true;
            break;
        }
    }
    return out;
}

/// Convenience overload: cell C(x, Theta) and mean Psi fbar_y.
inline ConditionalMoments approx_conditional_moments(const Eigen::VectorXi& x, const Vec& fbar,
                                                     const ModelParams& params,
                                                     const ThresholdSet& thresholds,
                                                     const ApproxOptions& opts = {})
{
    const ConditionalStructure cs = ConditionalStructure::from_covariance(params.delta);
    return approx_moments(thresholds.cell(x), params.psi() * fbar, cs, opts);
}

// ---------------------------------------------------------------------------
// Exact backends

struct QmcOptions
{
    /// total number of lattice points (split over the random shifts)
    int points = 1 << 13;
    int shifts = 8;
    std::uint64_t seed = 0x5eed;
};

namespace detail {

inline bool is_prime(int k)
{
    if (k < 2) return false;
    for (int f = 2; f * f <= k; ++f) {
        if (k % f == 0) return false;
    }
    return true;
}

/// Richtmyer generator sqrt(prime_k) mod 1.
inline Vec richtmyer(int dim)
{
    Vec q(dim);
    int prime = 1;
    for (int k = 0; k < dim; ++k) {
        do { ++prime; } while (!is_prime(prime));
        const double s = std::sqrt(static_cast<double>(prime));
        q(k) = s - std::floor(s);
    }
    return q;
}

/// Variable order putting the most constrained coordinates first.
inline std::vector<int> sampling_order(const Rectangle& cell, const Vec& mean, const Mat& cov)
{
    const int p = cell.dim();
    std::vector<double> logp(p);
    for (int j = 0; j < p; ++j) {
        const double sd = std::sqrt(cov(j, j));
        logp[j] = normal::log_mass((cell.lower(j) - mean(j)) / sd, (cell.upper(j) - mean(j)) / sd);
    }
    std::vector<int> order(p);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logp[a] < logp[b]; });
    return order;
}

/// Draw y ~ N(0,1) truncated to [lo, hi) by inversion of u in (0,1); `mass` receives
/// the interval probability (0 when it underflows, with `log_mass` set).
inline double truncated_inverse(double lo, double hi, double u, double& mass, double& log_mass)
{
    if (lo > 0.0) {
        const double ql = normal::ccdf(lo), qh = std::isinf(hi) ? 0.0 : normal::ccdf(hi);
        mass = ql - qh;
        if (mass > 0.0) {
            // keep the argument away from 0 so the quantile stays finite
            const double q = std::max(ql - u * mass, std::numeric_limits<double>::min());
            return std::clamp(normal::cquantile(q), lo, hi);
        }
    } else {
        const double pl = std::isinf(lo) ? 0.0 : normal::cdf(lo);
        const double ph = std::isinf(hi) ? 1.0 : normal::cdf(hi);
        mass = ph - pl;
        if (mass > 0.0) {
            const double t = std::clamp(pl + u * mass, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0));
            return std::clamp(normal::quantile(t), lo, hi);
        }
    }
    // mass underflows in double: log-domain mass and a boundary point
    mass = 0.0;
    log_mass = normal::log_mass(lo, hi);
    return std::isfinite(lo) ? lo : hi;
}

struct QmcAccumulator
{
    double log_prob = -normal::inf;
    Vec m;
    Mat second;
};

/// Scratch space reused across passes.
struct QmcBuffer
{
    std::vector<double> logw;
    Mat z;
};

/// One randomized lattice pass with antithetic pairs; `want_moments` toggles the z accumulation.
inline QmcAccumulator qmc_pass(const Rectangle& cell, const Vec& mean, const Mat& chol,
                               const std::vector<int>& order, const Vec& gen, const Vec& shift,
                               int npoints, bool want_moments, QmcBuffer& buf)
{
    const int p = cell.dim();
    buf.logw.assign(npoints, 0.0);
    if (want_moments) buf.z.resize(p, npoints);
    Vec y(p), lo_o(p), hi_o(p), mu_o(p), diag(p);
    for (int k = 0; k < p; ++k) {
        lo_o(k) = cell.lower(order[k]);
        hi_o(k) = cell.upper(order[k]);
        mu_o(k) = mean(order[k]);
        diag(k) = 1.0 / chol(k, k);
    }
    const int half = npoints / 2;
    for (int i = 0; i < npoints; ++i) {
        const int base = i % half + 1;
        const bool anti = i >= half;
        double w = 1.0, lw = 0.0;
        for (int k = 0; k < p; ++k) {
            double acc = mu_o(k);
            for (int l = 0; l < k; ++l) acc += chol(k, l) * y(l);
            const double lo = (lo_o(k) - acc) * diag(k);
            const double hi = (hi_o(k) - acc) * diag(k);
            double u = base * gen(k) + shift(k);
            u -= std::floor(u);
            if (anti) u = 1.0 - u;
            u = std::clamp(u, 1e-16, 1.0 - 1e-16);
            double mass = 0.0, lm = 0.0;
            if (k + 1 == p && !want_moments) {
                // the last coordinate only contributes its mass
                mass = lo > 0.0 ? normal::ccdf(lo) - normal::ccdf(hi) : normal::cdf(hi) - normal::cdf(lo);
                if (!(mass > 0.0)) {
                    mass = 0.0;
                    lm = normal::log_mass(lo, hi);
                }
            } else {
                y(k) = truncated_inverse(lo, hi, u, mass, lm);
            }
            if (mass > 0.0) {
                w *= mass;
                if (w < 1e-280) {
                    lw += std::log(w);
                    w = 1.0;
                }
            } else {
                lw += lm;
            }
        }
        buf.logw[i] = lw + std::log(w);
        if (want_moments) {
            for (int k = 0; k < p; ++k) {
                double acc = mu_o(k);
                for (int l = 0; l <= k; ++l) acc += chol(k, l) * y(l);
                buf.z(order[k], i) = acc;
            }
        }
    }
    QmcAccumulator acc;
    const double mx = *std::max_element(buf.logw.begin(), buf.logw.end());
    Vec wts(npoints);
    for (int i = 0; i < npoints; ++i) wts(i) = std::exp(buf.logw[i] - mx);
    const double sw = wts.sum();
    acc.log_prob = mx + std::log(sw / npoints);
    if (want_moments) {
        acc.m = buf.z * wts / sw;
        acc.second = buf.z * wts.asDiagonal() * buf.z.transpose() / sw;
    }
    return acc;
}

} // namespace detail

/// Probability of an MVN rectangle with its Monte Carlo standard error.
struct RectProb
{
    double prob = 0.0;
    double log_prob = -normal::inf;
    double se = 0.0;
    bool budget_exhausted = false;
};

struct RectProbOptions
{
    int points = 1 << 10;
    int shifts = 8;
    /// target standard error; points double until reached or `max_points` is hit
    double tol = 1e-3;
    int max_points = 1 << 14;
    std::uint64_t seed = 0x5eed;
};

/**
 * P(Z in cell) for Z ~ N(mean, cov) by randomized-lattice QMC over the
 * sequential conditional (separation-of-variables) transform.
 */
inline RectProb rect_prob(const Vec& mean, const Mat& cov, const Rectangle& cell,
                          const RectProbOptions& opts = {})
{
    if (!cell.valid()) ordred::detail::fail_validation("InvalidCell", "rectangle has lower >= upper");
    const int p = cell.dim();
    const std::vector<int> order = detail::sampling_order(cell, mean, cov);
    Mat cov_o(p, p);
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) cov_o(a, b) = cov(order[a], order[b]);
    }
    Eigen::LLT<Mat> llt(cov_o);
    if (llt.info() != Eigen::Success) ordred::detail::fail_numerical("NotPositiveDefinite", "covariance is not SPD");
    const Mat chol = llt.matrixL();
    const Vec gen = detail::richtmyer(p);
    detail::QmcBuffer buf;
    int per_shift = std::max(2, opts.points / opts.shifts);
    per_shift += per_shift % 2;
    RectProb out;
    while (true) {
        Rng rng(opts.seed);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::vector<double> lps(opts.shifts);
        for (int s = 0; s < opts.shifts; ++s) {
            Vec shift(p);
            for (int k = 0; k < p; ++k) shift(k) = unif(rng);
            lps[s] = detail::qmc_pass(cell, mean, chol, order, gen, shift, per_shift, false, buf).log_prob;
        }
        const double mx = *std::max_element(lps.begin(), lps.end());
        double mean_scaled = 0.0;
        for (double lp : lps) mean_scaled += std::exp(lp - mx);
        mean_scaled /= opts.shifts;
        double var = 0.0;
        for (double lp : lps) {
            const double d = std::exp(lp - mx) - mean_scaled;
            var += d * d;
        }
        var /= static_cast<double>(opts.shifts) * (opts.shifts - 1);
        out.log_prob = mx + std::log(mean_scaled);
        out.prob = std::min(1.0, std::exp(out.log_prob));
        out.se = std::exp(mx) * std::sqrt(var);
        if (out.se <= opts.tol) break;
        if (per_shift * opts.shifts * 2 > opts.max_points) {
            out.budget_exhausted = true;
            break;
        }
        per_shift *= 2;
    }
    return out;
}

/// Randomized-QMC cell moments of N(mean, cov) with shift-to-shift standard errors.
inline ConditionalMoments qmc_moments(const Rectangle& cell, const Vec& mean, const Mat& cov,
                                      const QmcOptions& opts = {})
{
    const int p = cell.dim();
    const std::vector<int> order = detail::sampling_order(cell, mean, cov);
    Mat cov_o(p, p);
    for (int a = 0; a < p; ++a) {
        for (int b = 0; b < p; ++b) cov_o(a, b) = cov(order[a], order[b]);
    }
    Eigen::LLT<Mat> llt(cov_o);
    if (llt.info() != Eigen::Success) ordred::detail::fail_numerical("NotPositiveDefinite", "covariance is not SPD");
    const Mat chol = llt.matrixL();
    const Vec gen = detail::richtmyer(p);
    int per_shift = std::max(2, opts.points / opts.shifts);
    per_shift += per_shift % 2;

    Rng rng(opts.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    detail::QmcBuffer buf;
    std::vector<detail::QmcAccumulator> passes;
    for (int s = 0; s < opts.shifts; ++s) {
        Vec shift(p);
        for (int k = 0; k < p; ++k) shift(k) = unif(rng);
        passes.push_back(detail::qmc_pass(cell, mean, chol, order, gen, shift, per_shift, true, buf));
    }
    // pool the passes by their probability weights
    double mx = -normal::inf;
    for (const auto& ps : passes) mx = std::max(mx, ps.log_prob);
    double tw = 0.0;
    ConditionalMoments out;
    out.method = Method::exact_qmc;
    out.m = Vec::Zero(p);
    out.second = Mat::Zero(p, p);
    for (const auto& ps : passes) {
        const double w = std::exp(ps.log_prob - mx);
        tw += w;
        out.m += w * ps.m;
        out.second += w * ps.second;
    }
    out.m /= tw;
    out.second /= tw;
    out.second = 0.5 * (out.second + out.second.transpose());
    out.s2 = out.second.diagonal();
    out.m_se = Vec::Zero(p);
    out.s2_se = Vec::Zero(p);
    const double ns = static_cast<double>(opts.shifts);
    for (const auto& ps : passes) {
        out.m_se += (ps.m - out.m).cwiseAbs2();
        out.s2_se += (ps.second.diagonal() - out.s2).cwiseAbs2();
    }
    out.m_se = (out.m_se / (ns * (ns - 1.0))).cwiseSqrt();
    out.s2_se = (out.s2_se / (ns * (ns - 1.0))).cwiseSqrt();
    return out;
}

/// Plain rejection sampling of cell moments; an unbiased oracle for small p.
inline ConditionalMoments rejection_moments(const Rectangle& cell, const Vec& mean, const Mat& cov,
                                            long proposals, std::uint64_t seed)
{
    const int p = cell.dim();
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success) ordred::detail::fail_numerical("NotPositiveDefinite", "covariance is not SPD");
    const Mat L = llt.matrixL();
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Vec e(p), z(p);
    Vec sum = Vec::Zero(p);
    Mat sum2 = Mat::Zero(p, p);
    Vec sum_sq_m = Vec::Zero(p), sum_sq_s2 = Vec::Zero(p);
    long accepted = 0;
    for (long t = 0; t < proposals; ++t) {
        for (int k = 0; k < p; ++k) e(k) = nd(rng);
        z = mean + L * e;
        bool inside = true;
        for (int k = 0; k < p && inside; ++k) inside = z(k) >= cell.lower(k) && z(k) < cell.upper(k);
        if (!inside) continue;
        ++accepted;
        sum += z;
        sum2.noalias() += z * z.transpose();
        sum_sq_m += z.cwiseAbs2();
        sum_sq_s2 += z.cwiseAbs2().cwiseAbs2();
    }
    const double rate = static_cast<double>(accepted) / static_cast<double>(proposals);
    if (accepted < 2 || rate < 1e-6) {
        ordred::detail::fail_numerical("BudgetExhausted", "rejection acceptance rate below 1e-6");
    }
    const double na = static_cast<double>(accepted);
    ConditionalMoments out;
    out.method = Method::exact_rejection;
    out.m = sum / na;
    out.second = sum2 / na;
    out.s2 = out.second.diagonal();
    out.m_se = ((sum_sq_m / na - out.m.cwiseAbs2()).cwiseMax(0.0) / na).cwiseSqrt();
    out.s2_se = ((sum_sq_s2 / na - out.s2.cwiseAbs2()).cwiseMax(0.0) / na).cwiseSqrt();
    return out;
}

struct ExactOptions
{
    Method method = Method::exact_qmc;
    QmcOptions qmc{};
    /// rejection proposals (exact_rejection only)
    long proposals = 1'000'000;
    int p_max = 8;
};

/// Exact (sampling-based) cell-conditional moments of Z | x, y.
inline ConditionalMoments exact_conditional_moments(const Eigen::VectorXi& x, const Vec& fbar,
                                                    const ModelParams& params,
                                                    const ThresholdSet& thresholds,
                                                    const ExactOptions& opts = {})
{
    if (params.p() > opts.p_max) {
        ordred::detail::fail_validation("ExactBackendTooLarge",
                                        "exact backend limited to p <= " + std::to_string(opts.p_max));
    }
    const Rectangle cell = thresholds.cell(x);
    const Vec mean = params.psi() * fbar;
    if (opts.method == Method::exact_rejection) {
        try {
            return rejection_moments(cell, mean, params.delta, opts.proposals, opts.qmc.seed);
        } catch (const NumericalError& e) {
            if (e.kind() != "BudgetExhausted") throw;
        }
    }
    return qmc_moments(cell, mean, params.delta, opts.qmc);
}

} // namespace tmvn
} // namespace ordred
