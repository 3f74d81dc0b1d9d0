#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>
#include <boost/math/tools/roots.hpp>
#include <ordred/error.hpp>
#include <ordred/linalg.hpp>
#include <ordred/model.hpp>
#include <ordred/normal.hpp>
#include <ordred/parallel.hpp>
#include <ordred/pfc.hpp>
#include <ordred/rng.hpp>
#include <ordred/tmvn.hpp>

namespace ordred {

enum class Backend { approximate, exact };

inline const char* to_string(Backend b) { return b == Backend::approximate ? "approximate" : "exact"; }

/// Conditional moment summaries of one E-step.
struct EStepSummary
{
    Mat S;
    Mat M;
    Mat S_fit;
    Mat S_res;
    /// M^T F, p x r
    Mat MtF;
    /// F^T F, r x r
    Mat FtF;
    int n = 0;
    /// observations whose approximate recursion hit the sweep limit
    int unconverged = 0;
};

/// Fills S_fit, S_res, MtF and FtF from S, M and F.
inline void finish_summary(EStepSummary& s, const Mat& F)
{
    s.n = static_cast<int>(s.M.rows());
    s.MtF = s.M.transpose() * F;
    s.FtF = F.transpose() * F;
    s.S_fit = s.MtF * s.FtF.ldlt().solve(s.MtF.transpose()) / static_cast<double>(s.n);
    s.S_fit = 0.5 * (s.S_fit + s.S_fit.transpose());
    s.S = 0.5 * (s.S + s.S.transpose());
    s.S_res = s.S - s.S_fit;
}

// ---------------------------------------------------------------------------
// Step 1

/**
 * Threshold roots of L_g(theta) = #{x_ij <= g} - sum_i Phi((theta - Psi_j fbar_i) / sd_j).
 *
 * sd_j is sqrt(Delta_jj). Throws ValidationError("LevelNotObserved") if a
 * cumulative count is 0 or n.
 */
inline ThresholdSet estimate_thresholds(const IMat& x, const std::vector<int>& g,
                                        const ModelParams& params, const Mat& F)
{
    const int n = static_cast<int>(x.rows()), p = static_cast<int>(x.cols());
    const Mat mu = F * params.psi().transpose(); // n x p latent means
    ThresholdSet out;
    out.cuts.resize(p);
    for (int j = 0; j < p; ++j) {
        const double sd = std::sqrt(params.delta(j, j));
        const Vec mj = mu.col(j);
        std::vector<int> count(g[j] + 1, 0);
        for (int i = 0; i < n; ++i) ++count[x(i, j)];
        Vec cuts(g[j] - 1);
        int cum = 0;
        const double lo0 = mj.minCoeff() - 20.0 * sd;
        const double hi0 = mj.maxCoeff() + 20.0 * sd;
        for (int level = 1; level < g[j]; ++level) {
            cum += count[level];
            if (cum == 0 || cum == n || count[level] == 0) {
                detail::fail_validation("LevelNotObserved",
                                        "level " + std::to_string(level) + " has no observations or closes the range",
                                        "X" + std::to_string(j + 1));
            }
            const double target = cum;
            auto L = [&](double theta) {
                double s = 0.0;
                for (int i = 0; i < n; ++i) s += normal::cdf((theta - mj(i)) / sd);
                return target - s;
            };
            double lo = level > 1 ? cuts(level - 2) : lo0;
            const double flo = L(lo), fhi = L(hi0);
            if (!(flo > 0.0) || !(fhi < 0.0)) {
                detail::fail_numerical("ThresholdBracket", "no sign change of L on the search interval");
            }
            std::uintmax_t iters = 200;
            const auto root = boost::math::tools::toms748_solve(
                L, lo, hi0, flo, fhi, boost::math::tools::eps_tolerance<double>(50), iters);
            double theta = 0.5 * (root.first + root.second);
            if (level > 1 && !(theta > cuts(level - 2))) theta = std::nextafter(cuts(level - 2), normal::inf);
            cuts(level - 1) = theta;
        }
        out.cuts[j] = std::move(cuts);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Step 2

struct EStepOptions
{
    Backend backend = Backend::approximate;
    tmvn::ApproxOptions approx{};
    tmvn::ExactOptions exact{};
    int threads = 1;
    std::uint64_t seed = 0;
};

inline EStepSummary e_step(const IMat& x, const ModelParams& params, const ThresholdSet& thresholds,
                           const Mat& F, const EStepOptions& opts)
{
    const int n = static_cast<int>(x.rows()), p = static_cast<int>(x.cols());
    const Mat mu = F * params.psi().transpose();
    std::vector<tmvn::ConditionalMoments> mom(n);
    std::optional<tmvn::ConditionalStructure> cs;
    if (opts.backend == Backend::approximate) {
        cs = tmvn::ConditionalStructure::from_covariance(params.delta);
    } else if (p > opts.exact.p_max) {
        detail::fail_validation("ExactBackendTooLarge",
                                "exact backend limited to p <= " + std::to_string(opts.exact.p_max));
    }
    parallel_for(static_cast<std::size_t>(n), opts.threads, [&](std::size_t i) {
        const Eigen::VectorXi xi = x.row(static_cast<Eigen::Index>(i)).transpose();
        const Rectangle cell = thresholds.cell(xi);
        const Vec mean = mu.row(static_cast<Eigen::Index>(i)).transpose();
        try {
            if (cs) {
                mom[i] = tmvn::approx_moments(cell, mean, *cs, opts.approx);
            } else {
                tmvn::QmcOptions q = opts.exact.qmc;
                q.seed = derive_seed(opts.seed, i);
                mom[i] = tmvn::qmc_moments(cell, mean, params.delta, q);
            }
        } catch (const NumericalError& e) {
            throw NumericalError(e.kind(), "observation " + std::to_string(i + 1) + ": " + e.what());
        }
    });
    EStepSummary s;
    s.M.resize(n, p);
    for (int i = 0; i < n; ++i) {
        s.M.row(i) = mom[i].m.transpose();
        if (!mom[i].converged) ++s.unconverged;
    }
    if (cs) {
        // product rule off the diagonal: S = (M'M + diag(sum_i s2_i - m_i^2)) / n
        Vec excess = pairwise_sum<Vec>(0, n, [&](std::size_t i) -> Vec {
            return mom[i].s2 - mom[i].m.cwiseAbs2();
        });
        s.S = (s.M.transpose() * s.M);
        s.S.diagonal() += excess;
    } else {
        s.S = pairwise_sum<Mat>(0, n, [&](std::size_t i) -> Mat { return mom[i].second_moment(); });
    }
    s.S /= static_cast<double>(n);
    finish_summary(s, F);
    return s;
}

/// Unpenalized maximizer of the partially maximized Q over semi-orthogonal alpha.
inline Mat mle_alpha(const EStepSummary& s, int d)
{
    const Eigen::Index p = s.S.rows();
    if (d == 0) return Mat(p, 0);
    const Mat root_inv = linalg::spd_power(s.S, -0.5);
    const linalg::SymEig eig = linalg::sym_eig_desc(root_inv * s.S_fit * root_inv);
    return linalg::orthonormal_basis(root_inv * eig.vectors.leftCols(d));
}

/**
 * Closed-form Delta and xi for a given alpha (any basis of the subspace).
 * The returned Delta is the raw maximizer and generally lacks a unit diagonal.
 */
inline ModelParams m_step_unscaled(const EStepSummary& s, const Mat& alpha_in)
{
    const Eigen::Index p = s.S.rows(), r = s.FtF.rows();
    const int d = static_cast<int>(alpha_in.cols());
    ModelParams out;
    out.alpha = d == 0 ? Mat(p, 0) : linalg::orthonormal_basis(alpha_in);
    Mat delta_inv = linalg::spd_inverse(s.S);
    if (d > 0) {
        const Mat& a = out.alpha;
        const Mat ares = a.transpose() * s.S_res * a;
        const double cond = linalg::condition_number(ares);
        if (!(cond <= 1e12)) {
            detail::fail_numerical("NearSingularResidual", "alpha' S_res alpha is near singular");
        }
        const Mat as = a.transpose() * s.S * a;
        delta_inv += a * linalg::spd_inverse(ares) * a.transpose() - a * linalg::spd_inverse(as) * a.transpose();
    }
    out.delta = linalg::spd_inverse(delta_inv);
    out.delta = 0.5 * (out.delta + out.delta.transpose());
    if (d == 0) {
        out.xi = Mat(0, r);
    } else {
        const Mat& a = out.alpha;
        const Mat ada = a.transpose() * out.delta * a;
        const Mat coef = s.FtF.ldlt().solve(s.MtF.transpose()).transpose(); // p x r
        out.xi = ada.ldlt().solve(a.transpose() * coef);
    }
    return out;
}

/**
 * Rescales Delta to unit diagonal. The latent scale changes by D^{-1/2}, so
 * alpha becomes an orthonormal basis of D^{1/2} span(alpha) and xi absorbs the
 * triangular factor; Psi maps to D^{-1/2} Psi.
 */
inline ModelParams rescale_unit_diagonal(const ModelParams& raw)
{
    const Vec dg = raw.delta.diagonal();
    const Vec root = dg.cwiseSqrt();
    const Vec inv_root = root.cwiseInverse();
    ModelParams out;
    out.delta = inv_root.asDiagonal() * raw.delta * inv_root.asDiagonal();
    out.delta = 0.5 * (out.delta + out.delta.transpose());
    out.delta.diagonal().setOnes();
    if (raw.d() == 0) {
        out.alpha = raw.alpha;
        out.xi = raw.xi;
        return out;
    }
    Mat R;
    out.alpha = linalg::orthonormal_basis(root.asDiagonal() * raw.alpha, &R);
    out.xi = R * raw.xi;
    return out;
}

inline ModelParams m_step(const EStepSummary& s, int d)
{
    return rescale_unit_diagonal(m_step_unscaled(s, mle_alpha(s, d)));
}

/// Expected complete-data log-likelihood Q(Omega) for the given summaries.
inline double q_value(const EStepSummary& s, const ModelParams& params)
{
    const double n = s.n;
    const double p = static_cast<double>(params.p());
    const Mat delta_inv = linalg::spd_inverse(params.delta);
    double q = -0.5 * p * n * std::log(2.0 * M_PI) - 0.5 * n * linalg::log_det_spd(params.delta)
               - 0.5 * n * (delta_inv.cwiseProduct(s.S)).sum();
    if (params.d() > 0) {
        const Mat ax = params.alpha * params.xi; // p x r
        q += (ax.cwiseProduct(s.MtF)).sum();
        q -= 0.5 * (ax * s.FtF * ax.transpose() * params.delta).trace();
    }
    return q;
}

/// Partially maximized Q at alpha: Delta and xi at their closed-form maximizers.
inline double q_partial(const EStepSummary& s, const Mat& alpha)
{
    const double n = s.n;
    const double p = static_cast<double>(s.S.rows());
    double q = -0.5 * p * n * (std::log(2.0 * M_PI) + 1.0) - 0.5 * n * linalg::log_det_spd(s.S);
    if (alpha.cols() > 0) {
        q += -0.5 * n * linalg::log_det_spd(alpha.transpose() * s.S_res * alpha)
             + 0.5 * n * linalg::log_det_spd(alpha.transpose() * s.S * alpha);
    }
    return q;
}

// ---------------------------------------------------------------------------
// Driver

/// Map from declared codes to compacted observed codes (unobserved levels merged).
struct LevelMap
{
    /// to[c-1] is the merged code of declared code c
    std::vector<int> to;
    int levels = 0;
    bool identity() const
    {
        for (std::size_t k = 0; k < to.size(); ++k) {
            if (to[k] != static_cast<int>(k) + 1) return false;
        }
        return static_cast<int>(to.size()) == levels;
    }
};

/// Unobserved levels join the nearest observed level, preferring the lower one.
inline LevelMap merge_unobserved(const Eigen::VectorXi& col, int g, const std::string& name)
{
    std::vector<int> count(g + 1, 0);
    for (Eigen::Index i = 0; i < col.size(); ++i) ++count[col(i)];
    std::vector<int> observed;
    for (int c = 1; c <= g; ++c) {
        if (count[c] > 0) observed.push_back(c);
    }
    if (observed.size() < 2) detail::fail_validation("NonOrdinalColumn", "fewer than 2 observed levels", name);
    LevelMap m;
    m.levels = static_cast<int>(observed.size());
    m.to.resize(g);
    for (int c = 1; c <= g; ++c) {
        int best = 0, best_dist = g + 1;
        for (std::size_t k = 0; k < observed.size(); ++k) {
            const int dist = std::abs(observed[k] - c);
            if (dist < best_dist) { // strict: ties keep the lower level
                best_dist = dist;
                best = static_cast<int>(k) + 1;
            }
        }
        m.to[c - 1] = best;
    }
    return m;
}

/// Response slices used by the Bayes mixing of the reduction.
struct SliceInfo
{
    /// rows: representative centered basis vector per slice
    Mat fbar;
    Vec prior;
    /// upper edges for a continuous response (empty when categorical)
    std::vector<double> edges;
};

struct FittedModel
{
    ModelParams params;
    ThresholdSet thresholds;
    Basis basis;
    int d = 0;
    std::vector<double> q_trace;
    bool converged = false;
    int iterations = 0;
    Backend backend = Backend::approximate;
    std::uint64_t seed = 0;
    std::vector<LevelMap> level_maps;
    SliceInfo slices;
    std::vector<std::string> predictor_names;
    std::vector<std::vector<std::string>> level_labels;
    std::string response_name = "y";
    std::vector<std::string> response_labels;
    /// group-lasso weight; 0 for the unpenalized fit
    double lambda = 0.0;
    /// observations whose approximate recursion hit the sweep limit in the last E-step
    int unconverged_moments = 0;

    int p() const { return params.p(); }

    /// Maps declared codes of a new observation to the fitted (merged) codes.
    Eigen::VectorXi map_codes(const Eigen::Ref<const Eigen::VectorXi>& x) const
    {
        Eigen::VectorXi out(x.size());
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            const LevelMap& m = level_maps[j];
            if (x(j) < 1 || x(j) > static_cast<int>(m.to.size())) {
                detail::fail_validation("InvalidDataset", "code outside the fitted level range", name(j));
            }
            out(j) = m.to[x(j) - 1];
        }
        return out;
    }

    std::string name(int j) const
    {
        if (j < static_cast<int>(predictor_names.size())) return predictor_names[j];
        return "X" + std::to_string(j + 1);
    }

    std::vector<int> active_set(double tol = 0.0) const
    {
        std::vector<int> out;
        for (int j = 0; j < params.p(); ++j) {
            if (params.d() > 0 && params.alpha.row(j).norm() > tol) out.push_back(j);
        }
        return out;
    }

    void validate() const
    {
        params.validate(1e-8);
        thresholds.validate();
        if (converged && q_trace.empty()) detail::fail_numerical("InvalidModel", "converged fit without q_trace");
    }
};

/// Chooses alpha from an E-step summary; `previous` is the current alpha.
using AlphaSolver = std::function<Mat(const EStepSummary&, int d, const Mat& previous)>;

struct FitOptions
{
    Backend backend = Backend::approximate;
    double tol = 1e-6;
    int max_iter = 200;
    int threads = 1;
    std::uint64_t seed = 0;
    tmvn::ApproxOptions approx{};
    tmvn::ExactOptions exact{};
    /// number of equal-frequency response slices used by the reduction (continuous y)
    int reduction_slices = 10;
    /// optional starting point replacing the PFC initialization
    std::optional<ModelParams> init;
    /// replaces the eigenvector alpha update (used by the group-lasso M-step)
    AlphaSolver alpha_solver;
    double lambda = 0.0;
    /// per-iteration hook (iteration, thresholds) for diagnostics
    std::function<void(int, const ThresholdSet&, const ModelParams&)> observer;
};

/// Step 0: PFC on centered raw codes, code correlation for Delta.
inline ModelParams initial_params(const IMat& x, const Mat& F, int d)
{
    const Eigen::Index n = x.rows(), p = x.cols();
    const Mat codes = x.cast<double>();
    const PfcFit pfc = fit_pfc(codes, F, d);
    const Mat xc = codes.rowwise() - codes.colwise().mean();
    const Vec sd = (xc.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
    const Mat xs = xc * sd.cwiseInverse().asDiagonal();
    Mat corr = xs.transpose() * xs / static_cast<double>(n);
    corr = 0.5 * (corr + corr.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(corr, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < 1e-6) {
        corr += 1e-3 * Mat::Identity(p, p);
        corr /= 1.001;
        corr.diagonal().setOnes();
    }
    ModelParams out;
    out.delta = corr;
    out.alpha = pfc.alpha;
    if (d == 0) {
        out.xi = Mat(0, F.cols());
        return out;
    }
    // Gamma: regression of standardized codes on F, p x r
    const Mat gamma = (F.transpose() * F).ldlt().solve(F.transpose() * xs).transpose();
    const Mat ada = out.alpha.transpose() * out.delta * out.alpha;
    out.xi = ada.ldlt().solve(out.alpha.transpose() * gamma);
    return out;
}

inline SliceInfo make_slices(const Vec& y, const Basis& basis, const Mat& F, bool categorical, int h)
{
    SliceInfo out;
    const Eigen::Index n = y.size();
    int count = 0;
    std::vector<int> slice(n);
    if (categorical) {
        count = static_cast<int>(y.maxCoeff()) + 1;
        for (Eigen::Index i = 0; i < n; ++i) slice[i] = static_cast<int>(y(i));
    } else {
        count = static_cast<int>(std::min<Eigen::Index>(h, n));
        out.edges = equal_frequency_edges(y, count);
        for (Eigen::Index i = 0; i < n; ++i) {
            int s = 0;
            for (double e : out.edges) {
                if (y(i) > e) ++s;
            }
            slice[i] = s;
        }
    }
    Mat sum = Mat::Zero(count, F.cols());
    Vec freq = Vec::Zero(count);
    for (Eigen::Index i = 0; i < n; ++i) {
        sum.row(slice[i]) += F.row(i);
        freq(slice[i]) += 1.0;
    }
    // drop empty slices (heavy ties)
    std::vector<int> keep;
    for (int s = 0; s < count; ++s) {
        if (freq(s) > 0) keep.push_back(s);
    }
    out.fbar.resize(static_cast<Eigen::Index>(keep.size()), F.cols());
    out.prior.resize(static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.fbar.row(k) = sum.row(keep[k]) / freq(keep[k]);
        out.prior(k) = freq(keep[k]) / static_cast<double>(n);
    }
    if (!categorical && keep.size() != static_cast<std::size_t>(count)) {
        std::vector<double> edges;
        for (std::size_t k = 0; k + 1 < keep.size(); ++k) edges.push_back(out.edges[keep[k]]);
        out.edges = edges;
    }
    (void)basis;
    return out;
}

/**
 * Alternates threshold estimation and the EM update until the relative change
 * of Q falls below `tol` or `max_iter` is reached.
 */
inline FittedModel fit(const OrdinalDataset& data, const BasisSpec& spec, int d, const FitOptions& opts = {})
{
    data.validate();
    const int p = data.p();
    if (d < 0 || d > std::min(spec.r(), p)) {
        detail::fail_validation("InvalidDimension", "d must lie in 0..min(r, p)");
    }
    if (opts.backend == Backend::exact && p > opts.exact.p_max) {
        detail::fail_validation("ExactBackendTooLarge",
                                "exact backend limited to p <= " + std::to_string(opts.exact.p_max));
    }
    FittedModel model;
    model.d = d;
    model.backend = opts.backend;
    model.seed = opts.seed;
    model.lambda = opts.lambda;
    model.predictor_names = data.predictor_names;
    model.level_labels = data.level_labels;
    model.response_name = data.response_name;
    model.response_labels = data.response_labels;

    // merge unobserved levels
    IMat x = data.x;
    std::vector<int> g(p);
    model.level_maps.resize(p);
    for (int j = 0; j < p; ++j) {
        model.level_maps[j] = merge_unobserved(data.x.col(j), data.g[j], data.column_name(j));
        g[j] = model.level_maps[j].levels;
        for (int i = 0; i < data.n(); ++i) x(i, j) = model.level_maps[j].to[data.x(i, j) - 1];
    }

    const BasisMatrix bm = build_basis(data.y, spec, data.categorical_response);
    const Mat& F = bm.F;
    model.basis = bm.basis;
    model.slices = make_slices(data.y, bm.basis, F, data.categorical_response, opts.reduction_slices);

    ModelParams params = opts.init ? *opts.init : initial_params(x, F, d);
    EStepOptions eo;
    eo.backend = opts.backend;
    eo.approx = opts.approx;
    eo.exact = opts.exact;
    eo.threads = opts.threads;

    double q_prev = 0.0;
    for (int k = 1; k <= opts.max_iter; ++k) {
        try {
            const ThresholdSet theta = estimate_thresholds(x, g, params, F);
            if (opts.observer) opts.observer(k, theta, params);
            // common random numbers across iterations keep the exact E-step a smooth map
            eo.seed = derive_seed(opts.seed, 0x65737470ULL);
            const EStepSummary s = e_step(x, params, theta, F, eo);
            model.unconverged_moments = s.unconverged;
            const Mat alpha = opts.alpha_solver ? opts.alpha_solver(s, d, params.alpha) : mle_alpha(s, d);
            const ModelParams raw = m_step_unscaled(s, alpha);
            const double q = q_value(s, raw);
            model.q_trace.push_back(q);
            params = rescale_unit_diagonal(raw);
            model.iterations = k;
            if (k >= 2 && std::abs(q - q_prev) < opts.tol * std::abs(q_prev)) {
                model.converged = true;
                break;
            }
            q_prev = q;
        } catch (const ValidationError&) {
            throw;
        } catch (const NumericalError& e) {
            throw NumericalError(e.kind(), "iteration " + std::to_string(k) + ": " + e.what());
        }
    }
    model.params = params;
    model.thresholds = estimate_thresholds(x, g, params, F);
    return model;
}

} // namespace ordred

namespace ordred {

/// Merged codes of a dataset under a fitted model's level maps.
inline IMat merged_codes(const OrdinalDataset& data, const FittedModel& model)
{
    IMat x(data.n(), data.p());
    for (int j = 0; j < data.p(); ++j) {
        for (int i = 0; i < data.n(); ++i) x(i, j) = model.level_maps[j].to[data.x(i, j) - 1];
    }
    return x;
}

/// E-step summary at the fitted parameters and final thresholds.
inline EStepSummary summary_at(const OrdinalDataset& data, const FittedModel& model, const FitOptions& opts)
{
    const BasisMatrix bm = build_basis(data.y, model.basis.spec, data.categorical_response);
    EStepOptions eo;
    eo.backend = opts.backend;
    eo.approx = opts.approx;
    eo.exact = opts.exact;
    eo.threads = opts.threads;
    eo.seed = derive_seed(opts.seed, 0x65737470ULL);
    return e_step(merged_codes(data, model), model.params, model.thresholds, bm.F, eo);
}

} // namespace ordred
