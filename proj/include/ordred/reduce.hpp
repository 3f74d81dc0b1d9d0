#pragma once
#include <atomic>
#include <cmath>
#include <cstdint>
#include <list>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>
#include <ordred/em.hpp>
#include <ordred/error.hpp>
#include <ordred/parallel.hpp>
#include <ordred/rng.hpp>
#include <ordred/tmvn.hpp>

namespace ordred {

struct ReduceOptions
{
    /// lattice points per rectangle probability
    int points = 1 << 10;
    int shifts = 8;
    tmvn::ApproxOptions approx{};
    /// LRU capacity in distinct code vectors (0 disables the cache)
    std::size_t cache_capacity = 1 << 16;
    int threads = 1;
};

struct CacheStats
{
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
};

namespace detail {

struct CodeHash
{
    std::size_t operator()(const std::vector<int>& v) const
    {
        return static_cast<std::size_t>(hash_codes(std::span<const int>(v.data(), v.size())));
    }
};

inline double log_sum_exp(const Vec& v)
{
    const double mx = v.maxCoeff();
    if (!std::isfinite(mx)) return mx;
    return mx + std::log((v.array() - mx).exp().sum());
}

} // namespace detail

/**
 * Computes R(x) = alpha' E(Z | x) by Bayes mixing over response slices.
 *
 * Results depend only on (x, model, options): rectangle probabilities use a
 * seed derived from the model seed and the code vector, so the cache never
 * changes returned values.
 */
class Reducer
{
public:
    explicit Reducer(const FittedModel& model, ReduceOptions opts = {})
        : model_(model), opts_(opts),
          structure_(tmvn::ConditionalStructure::from_covariance(model.params.delta)),
          psi_(model.params.psi())
    {
        if (model_.slices.fbar.rows() == 0) detail::fail_validation("InvalidModel", "model has no response slices");
        log_prior_ = model_.slices.prior.array().log().matrix();
        means_ = model_.slices.fbar * psi_.transpose(); // h x p
    }

    const FittedModel& model() const { return model_; }

    /// Posterior slice probabilities w(y) for declared codes x.
    Vec posterior_weights(const Eigen::Ref<const Eigen::VectorXi>& x) const
    {
        return weights_mapped(model_.map_codes(x));
    }

    /// E(Z | x) as a length-p vector.
    Vec conditional_mean(const Eigen::Ref<const Eigen::VectorXi>& x) const
    {
        const Eigen::VectorXi xm = model_.map_codes(x);
        const Vec w = weights_mapped(xm);
        const Rectangle cell = model_.thresholds.cell(xm);
        Vec ez = Vec::Zero(model_.p());
        for (Eigen::Index s = 0; s < w.size(); ++s) {
            if (w(s) == 0.0) continue;
            const tmvn::ConditionalMoments cm =
                tmvn::approx_moments(cell, means_.row(s).transpose(), structure_, opts_.approx);
            ez += w(s) * cm.m;
        }
        return ez;
    }

    /// R(x) = alpha' E(Z | x); cached by code vector.
    Vec reduce(const Eigen::Ref<const Eigen::VectorXi>& x) const
    {
        std::vector<int> key(x.data(), x.data() + x.size());
        if (opts_.cache_capacity > 0) {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = index_.find(key);
            if (it != index_.end()) {
                ++stats_.hits;
                lru_.splice(lru_.begin(), lru_, it->second);
                return it->second->second;
            }
            ++stats_.misses;
        }
        const Vec r = model_.params.alpha.transpose() * conditional_mean(x);
        if (opts_.cache_capacity > 0) {
            std::lock_guard<std::mutex> lock(mutex_);
            if (index_.find(key) == index_.end()) {
                lru_.emplace_front(key, r);
                index_[key] = lru_.begin();
                if (lru_.size() > opts_.cache_capacity) {
                    index_.erase(lru_.back().first);
                    lru_.pop_back();
                }
            }
        }
        return r;
    }

    /// n x d reduction of every row of x.
    Mat reduce_all(const IMat& x) const
    {
        Mat out(x.rows(), model_.params.d());
        parallel_for(static_cast<std::size_t>(x.rows()), opts_.threads, [&](std::size_t i) {
            const Eigen::VectorXi xi = x.row(static_cast<Eigen::Index>(i)).transpose();
            out.row(static_cast<Eigen::Index>(i)) = reduce(xi).transpose();
        });
        return out;
    }

    /// n x p matrix of E(Z | x_i).
    Mat conditional_means(const IMat& x) const
    {
        Mat out(x.rows(), model_.p());
        parallel_for(static_cast<std::size_t>(x.rows()), opts_.threads, [&](std::size_t i) {
            const Eigen::VectorXi xi = x.row(static_cast<Eigen::Index>(i)).transpose();
            out.row(static_cast<Eigen::Index>(i)) = conditional_mean(xi).transpose();
        });
        return out;
    }

    CacheStats cache_stats() const
    {
        std::lock_guard<std::mutex> lock(mutex_);
        return stats_;
    }

private:
    Vec weights_mapped(const Eigen::VectorXi& xm) const
    {
        const Rectangle cell = model_.thresholds.cell(xm);
        const Eigen::Index h = means_.rows();
        const std::uint64_t key = hash_codes(std::span<const int>(xm.data(), static_cast<std::size_t>(xm.size())));
        Vec logw(h);
        // one lattice for every slice, so ratios of slice probabilities share their error
        const std::uint64_t seed = derive_seed(model_.seed, key);
        for (Eigen::Index s = 0; s < h; ++s) {
            tmvn::RectProbOptions ro;
            ro.points = opts_.points;
            ro.shifts = opts_.shifts;
            ro.max_points = opts_.points;
            ro.tol = normal::inf;
            ro.seed = seed;
            logw(s) = tmvn::rect_prob(means_.row(s).transpose(), model_.params.delta, cell, ro).log_prob + log_prior_(s);
        }
        const double lse = detail::log_sum_exp(logw);
        if (!std::isfinite(lse)) {
            detail::fail_numerical("AllWeightsUnderflow", "every slice probability underflows");
        }
        Vec w = (logw.array() - lse).exp().matrix();
        return w / w.sum();
    }

    const FittedModel& model_;
    ReduceOptions opts_;
    tmvn::ConditionalStructure structure_;
    Mat psi_;
    Mat means_;
    Vec log_prior_;
    mutable std::mutex mutex_;
    mutable std::list<std::pair<std::vector<int>, Vec>> lru_;
    mutable std::unordered_map<std::vector<int>, std::list<std::pair<std::vector<int>, Vec>>::iterator, detail::CodeHash> index_;
    mutable CacheStats stats_;
};

inline Vec posterior_weights(const Eigen::Ref<const Eigen::VectorXi>& x, const FittedModel& model,
                             const ReduceOptions& opts = {})
{
    return Reducer(model, opts).posterior_weights(x);
}

inline Vec reduce(const Eigen::Ref<const Eigen::VectorXi>& x, const FittedModel& model, const ReduceOptions& opts = {})
{
    ReduceOptions o = opts;
    o.cache_capacity = 0;
    return Reducer(model, o).reduce(x);
}

struct ReductionResult
{
    Mat r;
    CacheStats cache_stats;
};

inline ReductionResult reduce_dataset(const IMat& x, const FittedModel& model, const ReduceOptions& opts = {})
{
    Reducer red(model, opts);
    ReductionResult out;
    out.r = red.reduce_all(x);
    out.cache_stats = red.cache_stats();
    return out;
}

struct SesIndex
{
    Vec index;
    /// true when the raw reduction was negated to correlate positively with the response
    bool flipped = false;
};

/// Min-max normalized one-dimensional reduction, oriented to correlate positively with y.
inline SesIndex ses_index(const Mat& reduced, const Vec& y)
{
    if (reduced.cols() != 1) detail::fail_validation("DimensionNotOne", "SES index requires d = 1");
    Vec r = reduced.col(0);
    const double lo = r.minCoeff(), hi = r.maxCoeff();
    if (!(hi > lo)) detail::fail_numerical("ZeroVariance", "reduction is constant over the dataset");
    const Vec rc = r.array() - r.mean();
    const Vec yc = y.array() - y.mean();
    SesIndex out;
    out.flipped = rc.dot(yc) < 0.0;
    if (out.flipped) r = -r;
    const double a = r.minCoeff(), b = r.maxCoeff();
    out.index = (r.array() - a) / (b - a);
    return out;
}

inline SesIndex ses_index(const OrdinalDataset& data, const FittedModel& model, const ReduceOptions& opts = {})
{
    if (model.params.d() != 1) detail::fail_validation("DimensionNotOne", "SES index requires d = 1");
    return ses_index(reduce_dataset(data.x, model, opts).r, data.y);
}

/// Full lookup table of R over the finite sample space, or a refusal with its size.
struct Tabulation
{
    bool built = false;
    /// bytes needed for the table values (prod G_j * d * 8)
    long double bytes = 0.0L;
    std::vector<int> levels;
    /// row k holds R for the code vector with mixed-radix index k (first predictor fastest)
    Mat table;

    Vec lookup(const Eigen::Ref<const Eigen::VectorXi>& mapped) const
    {
        std::size_t idx = 0, stride = 1;
        for (std::size_t j = 0; j < levels.size(); ++j) {
            idx += static_cast<std::size_t>(mapped(static_cast<Eigen::Index>(j)) - 1) * stride;
            stride *= static_cast<std::size_t>(levels[j]);
        }
        return table.row(static_cast<Eigen::Index>(idx)).transpose();
    }
};

inline long double table_bytes(const std::vector<int>& levels, int d)
{
    long double cells = 1.0L;
    for (int g : levels) cells *= static_cast<long double>(g);
    return cells * 8.0L * static_cast<long double>(d);
}

inline Tabulation tabulate(const FittedModel& model, long double budget_bytes, const ReduceOptions& opts = {})
{
    Tabulation t;
    for (int j = 0; j < model.p(); ++j) t.levels.push_back(model.thresholds.levels(j));
    t.bytes = table_bytes(t.levels, model.params.d());
    if (t.bytes > budget_bytes) return t;
    long double cells_ld = 1.0L;
    for (int g : t.levels) cells_ld *= g;
    const auto cells = static_cast<std::size_t>(cells_ld);
    IMat codes(static_cast<Eigen::Index>(cells), model.p());
    for (std::size_t k = 0; k < cells; ++k) {
        std::size_t rem = k;
        for (int j = 0; j < model.p(); ++j) {
            codes(static_cast<Eigen::Index>(k), j) = static_cast<int>(rem % t.levels[j]) + 1;
            rem /= t.levels[j];
        }
    }
    // codes here are already merged codes; build an identity-mapped copy of the model
    FittedModel identity = model;
    for (int j = 0; j < model.p(); ++j) {
        identity.level_maps[j].to.resize(t.levels[j]);
        for (int c = 1; c <= t.levels[j]; ++c) identity.level_maps[j].to[c - 1] = c;
    }
    ReduceOptions o = opts;
    o.cache_capacity = 0;
    t.table = Reducer(identity, o).reduce_all(codes);
    t.built = true;
    return t;
}

} // namespace ordred
