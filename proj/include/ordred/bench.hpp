#pragma once
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>
#include <ordred/dimension.hpp>
#include <ordred/em.hpp>
#include <ordred/knn.hpp>
#include <ordred/pfc.hpp>
#include <ordred/reduce.hpp>
#include <ordred/regularize.hpp>
#include <ordred/simulate.hpp>

// Replicated experiments shared by the CLI benchmarks and the acceptance harness.
namespace ordred {
namespace bench {

inline constexpr double nan = std::numeric_limits<double>::quiet_NaN();

using Progress = std::function<void(int rep)>;

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline double mean(const std::vector<double>& v)
{
    double s = 0.0;
    int k = 0;
    for (double x : v) {
        if (std::isnan(x)) continue;
        s += x;
        ++k;
    }
    return k > 0 ? s / k : nan;
}

inline double sd(const std::vector<double>& v)
{
    const double m = mean(v);
    double s = 0.0;
    int k = 0;
    for (double x : v) {
        if (std::isnan(x)) continue;
        s += (x - m) * (x - m);
        ++k;
    }
    return k > 1 ? std::sqrt(s / (k - 1)) : nan;
}

/// Mean and standard deviation of f over rows.
template <class Row, class F>
std::pair<double, double> column_stats(const std::vector<Row>& rows, F&& f)
{
    std::vector<double> v;
    v.reserve(rows.size());
    for (const Row& r : rows) v.push_back(f(r));
    return {mean(v), sd(v)};
}

/// Replicate seeds are derived from a master seed so any single rep can be rerun alone.
inline std::uint64_t rep_seed(std::uint64_t master, int rep) { return derive_seed(master, 0x726570ULL, rep); }

// ---------------------------------------------------------------------------

struct EstepRow
{
    int rep = 0;
    double angle_approx = nan;
    double angle_exact = nan;
    double seconds_approx = nan;
    double seconds_exact = nan;
};

struct EstepOptions
{
    int reps = 25;
    std::uint64_t seed = 1;
    sim::SimDesign design = sim::validation_design();
    bool run_exact = true;
    int threads = 1;
    tmvn::ExactOptions exact{};
};

/// Same training sample fitted with both E-step backends.
inline std::vector<EstepRow> validate_estep(const EstepOptions& o, const Progress& progress = {})
{
    const sim::PreparedDesign pd(o.design);
    const BasisSpec spec = BasisSpec::polynomial(o.design.r);
    std::vector<EstepRow> rows;
    for (int rep = 0; rep < o.reps; ++rep) {
        const std::uint64_t seed = rep_seed(o.seed, rep);
        const sim::SimData sd = sim::generate(pd, seed);
        EstepRow row;
        row.rep = rep;
        FitOptions fo;
        fo.seed = seed;
        fo.threads = o.threads;
        auto t0 = std::chrono::steady_clock::now();
        const FittedModel ma = fit(sd.data, spec, o.design.d, fo);
        row.seconds_approx = seconds_since(t0);
        row.angle_approx = sim::subspace_angle(ma.params.alpha, sd.truth.alpha);
        if (o.run_exact) {
            fo.backend = Backend::exact;
            fo.exact = o.exact;
            t0 = std::chrono::steady_clock::now();
            const FittedModel me = fit(sd.data, spec, o.design.d, fo);
            row.seconds_exact = seconds_since(t0);
            row.angle_exact = sim::subspace_angle(me.params.alpha, sd.truth.alpha);
        }
        rows.push_back(row);
        if (progress) progress(rep);
    }
    return rows;
}

// ---------------------------------------------------------------------------

struct AngleRow
{
    int rep = 0;
    double angle_ord = nan;
    double angle_pfc = nan;
    /// held-out k-NN mean squared error on R(X) and on the PFC projection of the codes
    double mse_ord = nan;
    double mse_pfc = nan;
    double seconds = nan;
};

struct AngleOptions
{
    int reps = 100;
    std::uint64_t seed = 1;
    sim::SimDesign design = sim::comparison_design();
    /// replicates (the first ones) that also run the held-out prediction comparison
    int knn_reps = 0;
    int threads = 1;
    ReduceOptions reduce{};
};

inline std::vector<AngleRow> angle_comparison(const AngleOptions& o, const Progress& progress = {})
{
    const sim::PreparedDesign pd(o.design);
    const BasisSpec spec = BasisSpec::polynomial(o.design.r);
    std::vector<AngleRow> rows;
    for (int rep = 0; rep < o.reps; ++rep) {
        const std::uint64_t seed = rep_seed(o.seed, rep);
        const sim::SimData sd = sim::generate(pd, seed);
        AngleRow row;
        row.rep = rep;
        FitOptions fo;
        fo.seed = seed;
        fo.threads = o.threads;
        const auto t0 = std::chrono::steady_clock::now();
        const FittedModel m = fit(sd.data, spec, o.design.d, fo);
        row.seconds = seconds_since(t0);
        row.angle_ord = sim::subspace_angle(m.params.alpha, sd.truth.alpha);
        const Mat codes = sd.data.x.cast<double>();
        const BasisMatrix bm = build_basis(sd.data.y, spec);
        const PfcFit pf = fit_pfc(codes, bm.F, o.design.d);
        row.angle_pfc = sim::subspace_angle(pf.alpha, sd.truth.alpha);
        if (rep < o.knn_reps) {
            const sim::SimData test = sim::generate(pd, derive_seed(seed, 0x74657374ULL));
            ReduceOptions ro = o.reduce;
            ro.threads = o.threads;
            const Reducer red(m, ro);
            const Mat rtr = red.reduce_all(sd.data.x);
            const Mat rte = red.reduce_all(test.data.x);
            const int k = knn::default_k(sd.data.n());
            row.mse_ord = (knn::regress(rtr, sd.data.y, rte, k) - test.data.y).squaredNorm() / test.data.n();
            const Mat ptr = codes * pf.alpha;
            const Mat pte = test.data.x.cast<double>() * pf.alpha;
            row.mse_pfc = (knn::regress(ptr, sd.data.y, pte, k) - test.data.y).squaredNorm() / test.data.n();
        }
        rows.push_back(row);
        if (progress) progress(rep);
    }
    return rows;
}

// ---------------------------------------------------------------------------

struct ChooseDRow
{
    int rep = 0;
    int d_perm = -1;
    int d_aic = -1;
    int d_bic = -1;
    int d_cv = -1;
    double seconds = nan;
};

struct ChooseDOptions
{
    int reps = 50;
    std::uint64_t seed = 1;
    sim::SimDesign design = sim::dimension_design();
    /// fitting basis degree (candidates d = 0..min(r, p))
    int r = 4;
    bool perm = true;
    bool ic = true;
    bool cv = true;
    PermutationOptions permutation{};
    CvOptions cv_options{};
    int threads = 1;
};

inline std::vector<ChooseDRow> choose_d(const ChooseDOptions& o, const Progress& progress = {})
{
    const sim::PreparedDesign pd(o.design);
    const BasisSpec spec = BasisSpec::polynomial(o.r);
    std::vector<ChooseDRow> rows;
    for (int rep = 0; rep < o.reps; ++rep) {
        const std::uint64_t seed = rep_seed(o.seed, rep);
        const sim::SimData sd = sim::generate(pd, seed);
        ChooseDRow row;
        row.rep = rep;
        FitOptions fo;
        fo.seed = seed;
        fo.threads = o.threads;
        const auto t0 = std::chrono::steady_clock::now();
        DimensionFits fits(sd.data, spec, fo);
        if (o.ic) {
            row.d_aic = ic_select(fits, false).d_hat;
            row.d_bic = ic_select(fits, true).d_hat;
        }
        if (o.perm) {
            PermutationOptions po = o.permutation;
            po.reduce.threads = o.threads;
            row.d_perm = permutation_select(fits, po).d_hat;
        }
        if (o.cv) {
            CvOptions co = o.cv_options;
            co.reduce.threads = o.threads;
            row.d_cv = cv_select(sd.data, spec, fo, co).d_hat;
        }
        row.seconds = seconds_since(t0);
        rows.push_back(row);
        if (progress) progress(rep);
    }
    return rows;
}

/// Fraction of rows whose selection (by `get`) lies in [lo, hi].
template <class F>
double fraction(const std::vector<ChooseDRow>& rows, F&& get, int lo, int hi)
{
    if (rows.empty()) return nan;
    int k = 0;
    for (const ChooseDRow& r : rows) k += get(r) >= lo && get(r) <= hi;
    return static_cast<double>(k) / rows.size();
}

// ---------------------------------------------------------------------------

struct SelectionRow
{
    int rep = 0;
    std::vector<int> active;
    bool contains = false;
    double lambda = nan;
    double seconds = nan;
};

struct SelectionOptions
{
    int reps = 50;
    std::uint64_t seed = 1;
    sim::SimDesign design = sim::selection_design();
    SelectLambdaOptions select{};
    int grid_points = 30;
    int threads = 1;
};

inline std::string join(const std::vector<int>& v, const char* sep = " ", int offset = 1)
{
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (k) s += sep;
        s += std::to_string(v[k] + offset);
    }
    return s;
}

inline std::vector<SelectionRow> variable_selection(const SelectionOptions& o, const Progress& progress = {})
{
    const sim::PreparedDesign pd(o.design);
    const BasisSpec spec = BasisSpec::polynomial(o.design.r);
    std::vector<SelectionRow> rows;
    for (int rep = 0; rep < o.reps; ++rep) {
        const std::uint64_t seed = rep_seed(o.seed, rep);
        const sim::SimData sd = sim::generate(pd, seed);
        SelectionRow row;
        row.rep = rep;
        FitOptions fo;
        fo.seed = seed;
        fo.threads = o.threads;
        const auto t0 = std::chrono::steady_clock::now();
        const double lmax = lambda_max_for(sd.data, spec, o.design.d, fo);
        const RegularizedFit rf =
            select_lambda(sd.data, spec, o.design.d, default_lambda_grid(lmax, o.grid_points), fo, o.select);
        row.seconds = seconds_since(t0);
        row.active = rf.active_set;
        row.lambda = rf.lambda;
        row.contains = std::includes(row.active.begin(), row.active.end(), sd.truth.S0.begin(), sd.truth.S0.end());
        rows.push_back(row);
        if (progress) progress(rep);
    }
    return rows;
}

// ---------------------------------------------------------------------------

struct SesRow
{
    int rep = 0;
    double r2_supervised = nan;
    double r2_pca = nan;
};

struct SesOptions
{
    int reps = 50;
    std::uint64_t seed = 1;
    sim::IncomeDesign design{};
    int threads = 1;
    ReduceOptions reduce{};
};

/// R^2 of the least-squares fit of t on (1, s, s^2).
inline double quadratic_r2(const Vec& s, const Vec& t)
{
    Mat X(s.size(), 3);
    X.col(0).setOnes();
    X.col(1) = s;
    X.col(2) = s.array().square().matrix();
    const Vec beta = X.colPivHouseholderQr().solve(t);
    const double ss_res = (t - X * beta).squaredNorm();
    const double ss_tot = (t.array() - t.mean()).matrix().squaredNorm();
    return 1.0 - ss_res / ss_tot;
}

/// First principal component score of the standardized codes.
inline Vec pca_index(const IMat& x)
{
    Mat c = x.cast<double>();
    c = c.rowwise() - c.colwise().mean();
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
        const double s = std::sqrt(c.col(j).squaredNorm() / c.rows());
        if (s > 0.0) c.col(j) /= s;
    }
    const Mat cov = c.transpose() * c / static_cast<double>(c.rows());
    return c * linalg::sym_eig_desc(cov).vectors.col(0);
}

/// Supervised single index vs first principal component of the codes, cube-root income as target.
inline std::vector<SesRow> ses_proxy(const SesOptions& o, const Progress& progress = {})
{
    std::vector<SesRow> rows;
    for (int rep = 0; rep < o.reps; ++rep) {
        sim::IncomeDesign ds = o.design;
        ds.seed = rep_seed(o.seed, rep);
        OrdinalDataset data = sim::generate_income(ds);
        data.y = data.y.unaryExpr([](double v) { return std::cbrt(v); });
        FitOptions fo;
        fo.seed = ds.seed;
        fo.threads = o.threads;
        const FittedModel m = fit(data, BasisSpec::polynomial(2), 1, fo);
        ReduceOptions ro = o.reduce;
        ro.threads = o.threads;
        SesRow row;
        row.rep = rep;
        row.r2_supervised = quadratic_r2(ses_index(data, m, ro).index, data.y);
        row.r2_pca = quadratic_r2(pca_index(data.x), data.y);
        rows.push_back(row);
        if (progress) progress(rep);
    }
    return rows;
}

} // namespace bench
} // namespace ordred
