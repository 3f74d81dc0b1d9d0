#pragma once
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>
#include <ordred/em.hpp>
#include <ordred/error.hpp>
#include <ordred/knn.hpp>
#include <ordred/linalg.hpp>
#include <ordred/reduce.hpp>
#include <ordred/rng.hpp>

namespace ordred {

struct PenaltyOptions
{
    int max_iter = 500;
    double rel_tol = 1e-7;
    /// rows with a smaller norm are set exactly to zero
    double zero_tol = 1e-8;
};

struct PenalizedAlpha
{
    /// S-orthonormal p x d solution (alpha' S alpha = I)
    Mat alpha;
    bool all_rows_killed = false;
    double objective = 0.0;
    int iterations = 0;
};

namespace detail {

inline double penalty_objective(const EStepSummary& s, const Mat& alpha, double lambda)
{
    return -(alpha.transpose() * s.S_fit * alpha).trace() + lambda * alpha.rowwise().norm().sum();
}

/// alpha (alpha' S alpha)^{-1/2}; returns false if alpha' S alpha is numerically singular.
inline bool s_polar(const Mat& S, Mat& alpha)
{
    Mat g = alpha.transpose() * S * alpha;
    g = 0.5 * (g + g.transpose());
    Eigen::SelfAdjointEigenSolver<Mat> es(g);
    const Vec ev = es.eigenvalues();
    if (ev.minCoeff() <= 1e-12 * std::max(1.0, ev.maxCoeff())) return false;
    alpha = alpha * es.eigenvectors() * ev.cwiseInverse().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    return true;
}

inline int nonzero_rows(const Mat& alpha)
{
    int c = 0;
    for (Eigen::Index j = 0; j < alpha.rows(); ++j) c += alpha.row(j).squaredNorm() > 0.0 ? 1 : 0;
    return c;
}

} // namespace detail

/// Unpenalized solution normalized so that alpha' S alpha = I.
inline Mat s_orthonormal_mle(const EStepSummary& s, int d)
{
    const Mat root_inv = linalg::spd_power(s.S, -0.5);
    const linalg::SymEig eig = linalg::sym_eig_desc(root_inv * s.S_fit * root_inv);
    return root_inv * eig.vectors.leftCols(d);
}

/// Largest row norm of the smooth-term gradient at the unpenalized solution.
inline double lambda_max(const EStepSummary& s, int d)
{
    if (d == 0) return 0.0;
    return (2.0 * s.S_fit * s_orthonormal_mle(s, d)).rowwise().norm().maxCoeff();
}

/**
 * Group-lasso estimate of alpha for one E-step summary.
 *
 * Proximal gradient on -tr(a' S_fit a) with row soft-thresholding, followed by
 * S-polar normalization. The best feasible iterate (starting from the
 * unpenalized solution) is kept, so the result never scores worse than it.
 */
inline PenalizedAlpha fit_penalized_alpha(const EStepSummary& s, int d, double lambda, const PenaltyOptions& opts = {},
                                          const Mat* warm = nullptr)
{
    if (lambda < 0.0) detail::fail_validation("InvalidLambda", "lambda must be non-negative");
    const Eigen::Index p = s.S.rows();
    PenalizedAlpha out;
    if (d == 0) {
        out.alpha = Mat(p, 0);
        return out;
    }
    const Mat start = s_orthonormal_mle(s, d);
    Mat best = start;
    double best_obj = detail::penalty_objective(s, start, lambda);
    if (warm && warm->rows() == p && warm->cols() == d) {
        Mat w = *warm;
        if (detail::s_polar(s.S, w)) {
            const double ow = detail::penalty_objective(s, w, lambda);
            if (ow < best_obj) {
                best = w;
                best_obj = ow;
            }
        }
    }
    if (lambda > lambda_max(s, d)) {
        // every row of the first proximal step from zero is thresholded away
        out.all_rows_killed = true;
        out.alpha = Mat::Zero(p, d);
        out.objective = std::numeric_limits<double>::infinity();
        return out;
    }
    if (lambda > 0.0) {
        const double lmax_fit = std::max(linalg::sym_eig_desc(s.S_fit).values(0), 1e-300);
        const double step = 1.0 / (2.0 * lmax_fit);
        Mat a = best;
        double prev = best_obj;
        bool killed = false;
        for (int it = 1; it <= opts.max_iter; ++it) {
            out.iterations = it;
            Mat b = a + step * 2.0 * s.S_fit * a;
            for (Eigen::Index j = 0; j < p; ++j) {
                const double nr = b.row(j).norm();
                const double shrink = nr > step * lambda ? 1.0 - step * lambda / nr : 0.0;
                b.row(j) *= shrink;
            }
            if (detail::nonzero_rows(b) < d || !detail::s_polar(s.S, b)) {
                killed = true;
                break;
            }
            a = b;
            const double obj = detail::penalty_objective(s, a, lambda);
            if (obj < best_obj) {
                best_obj = obj;
                best = a;
            }
            if (std::abs(obj - prev) < opts.rel_tol * std::max(std::abs(prev), 1e-300)) break;
            prev = obj;
        }
        if (killed && best_obj >= detail::penalty_objective(s, start, lambda) && detail::nonzero_rows(a) < d) {
            out.all_rows_killed = true;
            out.alpha = Mat::Zero(p, d);
            out.objective = std::numeric_limits<double>::infinity();
            return out;
        }
    }
    // hard threshold, then restore feasibility (zero rows stay zero)
    const double scale = best.rowwise().norm().maxCoeff();
    for (Eigen::Index j = 0; j < p; ++j) {
        if (best.row(j).norm() < opts.zero_tol * std::max(scale, 1.0)) best.row(j).setZero();
    }
    if (detail::nonzero_rows(best) < d || !detail::s_polar(s.S, best)) {
        out.all_rows_killed = true;
        out.alpha = Mat::Zero(p, d);
        out.objective = std::numeric_limits<double>::infinity();
        return out;
    }
    out.alpha = best;
    out.objective = detail::penalty_objective(s, best, lambda);
    return out;
}

/// Plugs the penalized solver into the EM driver; throws AllRowsKilled.
inline AlphaSolver penalized_solver(double lambda, PenaltyOptions opts = {})
{
    return [lambda, opts](const EStepSummary& s, int d, const Mat& previous) -> Mat {
        const PenalizedAlpha pa = fit_penalized_alpha(s, d, lambda, opts, &previous);
        if (pa.all_rows_killed) detail::fail_numerical("AllRowsKilled", "penalty removes every predictor");
        return pa.alpha;
    };
}

enum class LambdaCriterion { aic, bic, cv };

inline const char* to_string(LambdaCriterion c)
{
    switch (c) {
    case LambdaCriterion::aic: return "aic";
    case LambdaCriterion::bic: return "bic";
    default: return "cv";
    }
}

struct CriterionPoint
{
    double lambda = 0.0;
    /// +inf when the fit failed or every row was removed
    double value = 0.0;
    double se = 0.0;
    int active = 0;
};

struct RegularizedFit
{
    FittedModel model;
    double lambda = 0.0;
    std::vector<int> active_set;
    std::vector<CriterionPoint> criterion_trace;
};

/// Number of free parameters of a fit with `active` nonzero rows of alpha.
inline double ic_dof(int r, int d, int p_eff, int p, int n_theta)
{
    return static_cast<double>(r) * d + static_cast<double>(d) * (p_eff - d) + 0.5 * p * (p + 3.0) + n_theta;
}

inline int threshold_count(const FittedModel& m)
{
    int c = 0;
    for (int j = 0; j < m.p(); ++j) c += m.thresholds.levels(j) - 1;
    return c;
}

/// 2 (Q_p(I_p) - Q_d(alpha)) with both terms on the same E-step summary.
inline double lack_of_fit(const EStepSummary& s, const Mat& alpha)
{
    const Eigen::Index p = s.S.rows();
    return 2.0 * (q_partial(s, Mat::Identity(p, p)) - q_partial(s, alpha));
}

/**
 * Subspace used for the lack-of-fit statistic: the profile maximizer on `s` for
 * unpenalized fits (so the statistic vanishes at d = min(r, p)), the fitted
 * sparse alpha otherwise.
 */
inline Mat statistic_alpha(const FittedModel& m, const EStepSummary& s)
{
    return m.lambda > 0.0 ? m.params.alpha : mle_alpha(s, m.d);
}

/// Lack of fit plus c h, with c = 2 (AIC) or log n (BIC); `s` is the summary at the fit.
inline double information_criterion(const FittedModel& m, const EStepSummary& s, bool bic, int p_eff)
{
    const double c = bic ? std::log(static_cast<double>(s.n)) : 2.0;
    const double h = ic_dof(m.basis.spec.r(), m.d, p_eff, m.p(), threshold_count(m));
    return lack_of_fit(s, statistic_alpha(m, s)) + c * h;
}

/// Default path: `count` log-spaced values from 1e-4 lambda_max to lambda_max.
inline std::vector<double> default_lambda_grid(double lmax, int count = 30)
{
    std::vector<double> g(count);
    const double lo = std::log(1e-4 * lmax), hi = std::log(lmax);
    for (int k = 0; k < count; ++k) g[k] = std::exp(lo + (hi - lo) * k / std::max(count - 1, 1));
    return g;
}

/// lambda_max evaluated on the E-step summary of the unpenalized fit.
inline double lambda_max_for(const OrdinalDataset& data, const BasisSpec& spec, int d, const FitOptions& opts)
{
    FitOptions o = opts;
    o.alpha_solver = nullptr;
    o.lambda = 0.0;
    return lambda_max(summary_at(data, fit(data, spec, d, o), o), d);
}

struct SelectLambdaOptions
{
    LambdaCriterion criterion = LambdaCriterion::bic;
    /// reuse the previous path point as the initial value
    bool warm_start = false;
    int folds = 10;
    int knn_k = 0;
    PenaltyOptions penalty{};
    ReduceOptions reduce{};
    /// for cv: pick the largest lambda within one standard error of the minimum
    bool one_se = true;
    /// stop the path once every predictor has been removed
    bool stop_at_extinction = true;
};

namespace detail {

inline std::vector<int> fold_ids(int n, int folds, std::uint64_t seed)
{
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, 0x666f6c64ULL));
    for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> u(0, i);
        std::swap(perm[i], perm[u(rng)]);
    }
    std::vector<int> id(n);
    for (int k = 0; k < n; ++k) id[perm[k]] = k % folds;
    return id;
}

/// Out-of-fold prediction loss of k-NN on the reduction; returns per-fold losses.
inline std::vector<double> cv_losses(const OrdinalDataset& data, const BasisSpec& spec, int d, const FitOptions& fo,
                                     const std::vector<int>& folds, int nfolds, int k, const ReduceOptions& ro)
{
    std::vector<double> loss(nfolds, 0.0);
    for (int f = 0; f < nfolds; ++f) {
        std::vector<int> tr, te;
        for (int i = 0; i < data.n(); ++i) (folds[i] == f ? te : tr).push_back(i);
        const OrdinalDataset train = data.subset(tr);
        const OrdinalDataset test = data.subset(te);
        const FittedModel m = fit(train, spec, d, fo);
        const bool none = m.params.d() == 0;
        const Mat rtr = none ? Mat(train.n(), 0) : reduce_dataset(train.x, m, ro).r;
        const Mat rte = none ? Mat(test.n(), 0) : reduce_dataset(test.x, m, ro).r;
        const int kk = k > 0 ? k : knn::default_k(static_cast<int>(tr.size()));
        if (data.categorical_response) {
            std::vector<int> ltr(tr.size());
            for (std::size_t i = 0; i < tr.size(); ++i) ltr[i] = static_cast<int>(train.y(i));
            const std::vector<int> pred = knn::classify(rtr, ltr, rte, kk);
            double err = 0.0;
            for (std::size_t i = 0; i < te.size(); ++i) err += pred[i] != static_cast<int>(test.y(i)) ? 1.0 : 0.0;
            loss[f] = err / static_cast<double>(te.size());
        } else {
            const Vec pred = knn::regress(rtr, train.y, rte, kk);
            loss[f] = (pred - test.y).squaredNorm() / static_cast<double>(te.size());
        }
    }
    return loss;
}

inline std::pair<double, double> mean_se(const std::vector<double>& v)
{
    const double n = static_cast<double>(v.size());
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return {m, sd / std::sqrt(n)};
}

} // namespace detail

/**
 * Fits the penalized EM at every grid value (ascending) and keeps the one
 * minimizing the criterion.
 */
inline RegularizedFit select_lambda(const OrdinalDataset& data, const BasisSpec& spec, int d,
                                    const std::vector<double>& grid, const FitOptions& base,
                                    const SelectLambdaOptions& opts = {})
{
    if (grid.empty()) detail::fail_validation("InvalidLambdaGrid", "lambda grid is empty");
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (grid[k] < 0.0 || (k > 0 && grid[k] < grid[k - 1])) {
            detail::fail_validation("InvalidLambdaGrid", "lambda grid must be non-negative and ascending");
        }
    }
    RegularizedFit out;
    std::optional<ModelParams> warm;
    const std::vector<int> folds = detail::fold_ids(data.n(), opts.folds, base.seed);
    struct Entry
    {
        double lambda;
        FittedModel model;
    };
    std::vector<Entry> fitted;

    for (double lambda : grid) {
        FitOptions fo = base;
        fo.lambda = lambda;
        fo.alpha_solver = lambda > 0.0 ? penalized_solver(lambda, opts.penalty) : AlphaSolver{};
        if (opts.warm_start && warm) fo.init = warm;
        CriterionPoint cp;
        cp.lambda = lambda;
        try {
            FittedModel m = fit(data, spec, d, fo);
            cp.active = static_cast<int>(m.active_set().size());
            if (opts.criterion == LambdaCriterion::cv) {
                const auto [mu, se] = detail::mean_se(
                    detail::cv_losses(data, spec, d, fo, folds, opts.folds, opts.knn_k, opts.reduce));
                cp.value = mu;
                cp.se = se;
            } else {
                cp.value = information_criterion(m, summary_at(data, m, fo), opts.criterion == LambdaCriterion::bic,
                                                 cp.active);
            }
            if (opts.warm_start) warm = m.params;
            fitted.push_back({lambda, std::move(m)});
        } catch (const NumericalError& e) {
            cp.value = std::numeric_limits<double>::infinity();
            out.criterion_trace.push_back(cp);
            if (e.kind() == "AllRowsKilled" && opts.stop_at_extinction) break;
            continue;
        } catch (const ValidationError& e) {
            throw ValidationError(e.kind(), "lambda " + std::to_string(lambda) + ": " + e.what(), e.subject());
        }
        out.criterion_trace.push_back(cp);
    }

    // successful fits, in the same order as `fitted`
    std::vector<const CriterionPoint*> ok;
    for (const CriterionPoint& cp : out.criterion_trace) {
        if (std::isfinite(cp.value)) ok.push_back(&cp);
    }
    if (ok.empty()) detail::fail_numerical("NoValidLambda", "every grid point failed");
    std::size_t arg = 0;
    for (std::size_t k = 1; k < ok.size(); ++k) {
        if (ok[k]->value < ok[arg]->value) arg = k;
    }
    if (opts.criterion == LambdaCriterion::cv && opts.one_se) {
        const double bound = ok[arg]->value + ok[arg]->se;
        for (std::size_t k = ok.size(); k-- > arg;) {
            if (ok[k]->value <= bound) {
                arg = k;
                break;
            }
        }
    }
    out.model = std::move(fitted[arg].model);
    out.lambda = fitted[arg].lambda;
    out.active_set = out.model.active_set();
    return out;
}

} // namespace ordred
