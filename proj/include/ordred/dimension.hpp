#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>
#include <ordred/em.hpp>
#include <ordred/error.hpp>
#include <ordred/knn.hpp>
#include <ordred/linalg.hpp>
#include <ordred/reduce.hpp>
#include <ordred/regularize.hpp>
#include <ordred/rng.hpp>

namespace ordred {

enum class DimMethod { permutation, cv, aic, bic };

inline const char* to_string(DimMethod m)
{
    switch (m) {
    case DimMethod::permutation: return "perm";
    case DimMethod::cv: return "cv";
    case DimMethod::aic: return "aic";
    default: return "bic";
    }
}

struct DimCandidate
{
    int d = 0;
    /// partially maximized Q of the fit with this d on its own E-step summary (NaN when not fitted)
    double q = std::numeric_limits<double>::quiet_NaN();
    /// permutation: observed statistic; aic/bic: criterion; cv: mean out-of-fold loss
    double value = std::numeric_limits<double>::quiet_NaN();
    double p_value = std::numeric_limits<double>::quiet_NaN();
    /// cv: standard error of the fold losses
    double se = 0.0;
    /// permutation: replicates actually run, and how many exceeded the observed statistic
    int replicates = 0;
    int exceed = 0;
};

struct DimensionDecision
{
    int d_hat = 0;
    DimMethod method = DimMethod::permutation;
    std::vector<DimCandidate> diagnostics;
};

inline int max_dimension(const OrdinalDataset& data, const BasisSpec& spec)
{
    return std::min(spec.r(), data.p());
}

/// Fits for d = 0..max_dimension, computed on demand and reused across selectors.
class DimensionFits
{
public:
    DimensionFits(const OrdinalDataset& data, const BasisSpec& spec, FitOptions opts)
        : data_(data), spec_(spec), opts_(std::move(opts)), fits_(max_dimension(data, spec) + 1),
          summaries_(fits_.size())
    {
    }

    const FittedModel& at(int d)
    {
        if (d < 0 || d >= static_cast<int>(fits_.size())) detail::fail_validation("InvalidDimension", "d out of range");
        if (!fits_[d]) fits_[d] = fit(data_, spec_, d, opts_);
        return *fits_[d];
    }

    /// E-step summary at the fitted model of dimension d.
    const EStepSummary& summary(int d)
    {
        const FittedModel& m = at(d);
        if (!summaries_[d]) summaries_[d] = summary_at(data_, m, opts_);
        return *summaries_[d];
    }

    /// Lack-of-fit statistic of dimension d against the full model.
    double statistic(int d) { return lack_of_fit(summary(d), statistic_alpha(at(d), summary(d))); }

    int d_max() const { return static_cast<int>(fits_.size()) - 1; }
    const OrdinalDataset& data() const { return data_; }
    const BasisSpec& spec() const { return spec_; }
    const FitOptions& options() const { return opts_; }

private:
    const OrdinalDataset& data_;
    BasisSpec spec_;
    FitOptions opts_;
    std::vector<std::optional<FittedModel>> fits_;
    std::vector<std::optional<EStepSummary>> summaries_;
};

/**
 * 2 (Q_p(I_p) - Q_m(alpha)) for the m-dimensional fit. Both partially
 * maximized Q terms use the E-step summary at that fit, so the statistic is
 * non-negative and zero for m = min(r, p).
 */
inline double lrt_statistic(const OrdinalDataset& data, const BasisSpec& spec, int m, const FitOptions& opts = {})
{
    DimensionFits fits(data, spec, opts);
    return fits.statistic(m);
}

struct PermutationOptions
{
    int B = 500;
    double level = 0.01;
    /// stop a candidate's replicates once the decision can no longer change
    bool early_stop = true;
    /// refits start from the estimates on the observed data
    bool warm_start = true;
    ReduceOptions reduce{};
};

namespace detail {

/// Rediscretizes a latent matrix by fitted thresholds, returning declared codes.
inline IMat discretize_latent(const Mat& z, const FittedModel& m)
{
    IMat x(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        // invert the merge so codes stay in the declared range
        std::vector<int> back(m.level_maps[j].levels + 1, 0);
        for (int c = static_cast<int>(m.level_maps[j].to.size()); c >= 1; --c) back[m.level_maps[j].to[c - 1]] = c;
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            x(i, j) = back[m.thresholds.discretize(static_cast<int>(j), z(i, j))];
        }
    }
    return x;
}

} // namespace detail

/**
 * Sequential permutation test: for m = 0, 1, ... test d = m against the full
 * model and return the first m that is not rejected.
 */
inline DimensionDecision permutation_select(DimensionFits& fits, const PermutationOptions& popts)
{
    if (popts.B < 1) detail::fail_validation("InvalidPermutationCount", "B must be positive");
    if (!(popts.level > 0.0 && popts.level < 1.0)) detail::fail_validation("InvalidLevel", "level must lie in (0, 1)");
    const OrdinalDataset& data = fits.data();
    const int dmax = fits.d_max();
    DimensionDecision out;
    out.method = DimMethod::permutation;
    out.d_hat = dmax;
    // exceedances allowed while still rejecting: count / B <= level
    const int allowed = static_cast<int>(std::floor(popts.level * popts.B + 1e-9));

    for (int m = 0; m < dmax; ++m) {
        const FittedModel& fm = fits.at(m);
        DimCandidate c;
        c.d = m;
        c.q = q_partial(fits.summary(m), fm.params.alpha);
        c.value = fits.statistic(m);

        const Mat ez = Reducer(fm, popts.reduce).conditional_means(data.x);
        const Mat alpha = fm.params.alpha;
        const Mat proj = alpha * alpha.transpose();
        const Mat comp = Mat::Identity(data.p(), data.p()) - proj;
        const Mat kept = ez * proj;
        const Mat moved = ez * comp;

        for (int b = 0; b < popts.B; ++b) {
            if (popts.early_stop && (c.exceed > allowed || c.exceed + (popts.B - b) <= allowed)) break;
            std::vector<int> perm(data.n());
            std::iota(perm.begin(), perm.end(), 0);
            Rng rng(derive_seed(fits.options().seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(b)));
            std::shuffle(perm.begin(), perm.end(), rng);
            Mat zs = kept;
            for (int i = 0; i < data.n(); ++i) zs.row(i) += moved.row(perm[i]);
            OrdinalDataset star = data;
            star.x = detail::discretize_latent(zs, fm);
            ++c.replicates;
            try {
                star.validate();
                FitOptions fo = fits.options();
                if (popts.warm_start) fo.init = fm.params;
                const FittedModel rm = fit(star, fits.spec(), m, fo);
                const EStepSummary ss = summary_at(star, rm, fo);
                if (lack_of_fit(ss, statistic_alpha(rm, ss)) >= c.value) ++c.exceed;
            } catch (const Error&) {
                // a degenerate permuted sample carries no information; drop it
                --c.replicates;
            }
        }
        c.p_value = c.replicates > 0 ? static_cast<double>(c.exceed) / c.replicates : 1.0;
        const bool reject = c.replicates > 0 && c.p_value <= popts.level;
        out.diagnostics.push_back(c);
        if (!reject) {
            out.d_hat = m;
            return out;
        }
    }
    return out;
}

inline DimensionDecision permutation_select(const OrdinalDataset& data, const BasisSpec& spec, const FitOptions& opts,
                                            const PermutationOptions& popts)
{
    DimensionFits fits(data, spec, opts);
    return permutation_select(fits, popts);
}

/// AIC/BIC over d = 0..d_max: lack of fit plus c h.
inline DimensionDecision ic_select(DimensionFits& fits, bool bic)
{
    DimensionDecision out;
    out.method = bic ? DimMethod::bic : DimMethod::aic;
    double best = std::numeric_limits<double>::infinity();
    for (int d = 0; d <= fits.d_max(); ++d) {
        const FittedModel& m = fits.at(d);
        DimCandidate c;
        c.d = d;
        c.q = q_partial(fits.summary(d), m.params.alpha);
        c.value = information_criterion(m, fits.summary(d), bic, fits.data().p());
        if (c.value < best) {
            best = c.value;
            out.d_hat = d;
        }
        out.diagnostics.push_back(c);
    }
    return out;
}

inline DimensionDecision ic_select(const OrdinalDataset& data, const BasisSpec& spec, bool bic, const FitOptions& opts = {})
{
    DimensionFits fits(data, spec, opts);
    return ic_select(fits, bic);
}

struct CvOptions
{
    int folds = 10;
    /// 0 means ceil(sqrt(n_train))
    int k = 0;
    bool one_se = false;
    ReduceOptions reduce{};
};

/// Fold-wise k-NN prediction loss on the reduction for every candidate d.
inline DimensionDecision cv_select(const OrdinalDataset& data, const BasisSpec& spec, const FitOptions& opts,
                                   const CvOptions& cv = {})
{
    if (cv.folds < 2 || cv.folds > data.n()) detail::fail_validation("InvalidFolds", "folds must lie in 2..n");
    const std::vector<int> ids = detail::fold_ids(data.n(), cv.folds, opts.seed);
    DimensionDecision out;
    out.method = DimMethod::cv;
    const int dmax = max_dimension(data, spec);
    for (int d = 0; d <= dmax; ++d) {
        DimCandidate c;
        c.d = d;
        const auto [mu, se] = detail::mean_se(detail::cv_losses(data, spec, d, opts, ids, cv.folds, cv.k, cv.reduce));
        c.value = mu;
        c.se = se;
        out.diagnostics.push_back(c);
    }
    std::size_t arg = 0;
    for (std::size_t k = 1; k < out.diagnostics.size(); ++k) {
        if (out.diagnostics[k].value < out.diagnostics[arg].value) arg = k;
    }
    if (cv.one_se) {
        const double bound = out.diagnostics[arg].value + out.diagnostics[arg].se;
        for (std::size_t k = 0; k < arg; ++k) {
            if (out.diagnostics[k].value <= bound) {
                arg = k;
                break;
            }
        }
    }
    out.d_hat = out.diagnostics[arg].d;
    return out;
}

} // namespace ordred
