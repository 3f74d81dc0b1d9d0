#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>
#include <ordred/error.hpp>
#include <ordred/linalg.hpp>
#include <ordred/model.hpp>
#include <ordred/normal.hpp>
#include <ordred/rng.hpp>

namespace ordred {
namespace sim {

enum class AlphaRule { ones_and_signs, sparse_block, custom };
enum class ErrorKind { normal, chi2 };

/**
 * Synthetic design: Y ~ N(0,1), Z | Y = Delta alpha xi f_Y + eps with
 * f_Y = (Y, Y^2 - 1, ...), Delta = c I + rho alpha_D B alpha_D^T, eps ~ N(0, Delta)
 * or a centered chi-square(5) analogue mixed through Delta^{1/2}.
 */
struct SimDesign
{
    int n = 100;
    int p = 5;
    int d = 2;
    /// degree of the polynomial f_Y used to generate (not to fit)
    int r = 2;
    AlphaRule alpha_rule = AlphaRule::ones_and_signs;
    /// used when alpha_rule == custom (p x d, any basis)
    Mat alpha_custom;
    double delta_c = 1.0;
    double rho = 1.0;
    /// spectral scale of the fixed d x d matrix B
    double b_scale = 1.0;
    /// when true, the Delta term uses the dense ones-and-signs basis rather than alpha
    bool dense_delta_basis = false;
    /// xi = xi_scale * [I_d 0]
    double xi_scale = 1.0;
    ErrorKind error_kind = ErrorKind::normal;
    std::vector<int> g;
    /// seed of the quantities "fixed at the outset" (e, B, thresholds)
    std::uint64_t structure_seed = 2024;
    std::uint64_t seed = 1;

    std::vector<int> levels() const
    {
        if (static_cast<int>(g.size()) == p) return g;
        if (g.size() == 1) return std::vector<int>(p, g[0]);
        return std::vector<int>(p, 4);
    }
};

/// G_j cycling through 3, 4, 5.
inline std::vector<int> cycling_levels(int p)
{
    std::vector<int> g(p);
    for (int j = 0; j < p; ++j) g[j] = 3 + (j % 3);
    return g;
}

/// Ground truth returned alongside a generated sample; for evaluation only.
struct GroundTruth
{
    /// reduction basis in the unit-diagonal latent coordinates
    Mat alpha;
    /// latent sample on the unit-diagonal scale, n x p
    Mat Z;
    ThresholdSet thresholds;
    std::vector<int> S0;
    Mat delta;
};

struct SimData
{
    OrdinalDataset data;
    GroundTruth truth;
};

namespace detail {

inline Mat dense_basis(int p, std::uint64_t structure_seed)
{
    Rng rng(derive_seed(structure_seed, 11));
    std::normal_distribution<double> nd;
    Mat a(p, 2);
    while (true) {
        int pos = 0;
        for (int j = 0; j < p; ++j) {
            a(j, 0) = 1.0;
            a(j, 1) = nd(rng) >= 0.0 ? 1.0 : -1.0;
            pos += a(j, 1) > 0.0;
        }
        if (pos > 0 && pos < p) break;
    }
    return a / std::sqrt(static_cast<double>(p));
}

inline Mat fixed_b(int d, double scale, std::uint64_t structure_seed)
{
    Rng rng(derive_seed(structure_seed, 12));
    std::normal_distribution<double> nd;
    Mat w(d, d);
    for (int a = 0; a < d; ++a) {
        for (int b = 0; b < d; ++b) w(a, b) = nd(rng);
    }
    Mat b = 0.5 * (w + w.transpose());
    // keep I + alpha B alpha^T comfortably positive definite
    const double lo = linalg::sym_eig_desc(b).values.minCoeff();
    if (lo < -0.5) b += (-0.5 - lo) * Mat::Identity(d, d);
    return scale * b;
}

inline Mat sparse_block(int p)
{
    Mat a = Mat::Zero(p, 2);
    const double A[2][4] = {{0.5, 0.5, 0.5, 0.5}, {-0.5, 0.5, 0.5, -0.5}};
    for (int j = 0; j < 4 && j < p; ++j) {
        a(j, 0) = A[0][j];
        a(j, 1) = A[1][j];
    }
    return a;
}

inline Vec basis_values(double y, int r)
{
    Vec f(r);
    // first two terms are the centered y and y^2; higher powers are centered by their moments
    double v = 1.0;
    for (int k = 0; k < r; ++k) {
        v *= y;
        double m = 0.0;
        const int deg = k + 1;
        if (deg % 2 == 0) {
            m = 1.0;
            for (int t = deg - 1; t > 0; t -= 2) m *= t;
        }
        f(k) = v - m;
    }
    return f;
}

} // namespace detail

/// Model quantities implied by a design (independent of the replicate seed).
struct DesignStructure
{
    Mat alpha;       // p x d orthonormal, model coordinates
    Mat delta;       // p x p
    Mat xi;          // d x r
    Mat delta_root;  // symmetric square root of delta
    Vec scale;       // sqrt(diag(delta))
    std::vector<int> S0;
};

inline DesignStructure design_structure(const SimDesign& ds)
{
    if (ds.p < 1 || ds.d < 0 || ds.d > std::min(ds.p, ds.r)) {
        ordred::detail::fail_validation("InvalidDesign", "design dimensions are inconsistent");
    }
    DesignStructure st;
    Mat raw;
    switch (ds.alpha_rule) {
        case AlphaRule::ones_and_signs: raw = detail::dense_basis(ds.p, ds.structure_seed).leftCols(ds.d); break;
        case AlphaRule::sparse_block: raw = detail::sparse_block(ds.p).leftCols(ds.d); break;
        case AlphaRule::custom: raw = ds.alpha_custom; break;
    }
    if (raw.rows() != ds.p || raw.cols() != ds.d) {
        ordred::detail::fail_validation("InvalidDesign", "alpha has the wrong shape");
    }
    st.alpha = ds.d > 0 ? linalg::orthonormal_basis(raw) : Mat(ds.p, 0);
    st.delta = ds.delta_c * Mat::Identity(ds.p, ds.p);
    if (ds.d > 0 && ds.rho != 0.0) {
        const Mat basis = ds.dense_delta_basis
                              ? linalg::orthonormal_basis(detail::dense_basis(ds.p, ds.structure_seed).leftCols(ds.d))
                              : st.alpha;
        st.delta += ds.rho * basis * detail::fixed_b(ds.d, ds.b_scale, ds.structure_seed) * basis.transpose();
    }
    if (linalg::sym_eig_desc(st.delta).values.minCoeff() <= 0.0) {
        ordred::detail::fail_validation("InvalidDesign", "generated Delta is not positive definite");
    }
    st.delta_root = linalg::spd_power(st.delta, 0.5);
    st.scale = st.delta.diagonal().cwiseSqrt();
    st.xi = Mat::Zero(ds.d, ds.r);
    for (int k = 0; k < std::min(ds.d, ds.r); ++k) st.xi(k, k) = ds.xi_scale;
    for (int j = 0; j < ds.p; ++j) {
        if (ds.d > 0 && st.alpha.row(j).norm() > 1e-12) st.S0.push_back(j);
    }
    return st;
}

namespace detail {

/// Draws n latent rows on the unit-diagonal scale together with Y.
inline void draw_latent(const SimDesign& ds, const DesignStructure& st, int n, Rng& rng, Vec& y, Mat& z)
{
    std::normal_distribution<double> nd;
    std::chi_squared_distribution<double> chi(5.0);
    const Mat psi = st.delta * st.alpha * st.xi; // p x r
    y.resize(n);
    z.resize(n, ds.p);
    Vec u(ds.p);
    for (int i = 0; i < n; ++i) {
        y(i) = nd(rng);
        for (int j = 0; j < ds.p; ++j) {
            u(j) = ds.error_kind == ErrorKind::normal ? nd(rng) : (chi(rng) - 5.0) / std::sqrt(10.0);
        }
        const Vec zi = psi * basis_values(y(i), ds.r) + st.delta_root * u;
        z.row(i) = zi.cwiseQuotient(st.scale).transpose();
    }
}

} // namespace detail

/// Equal-probability cut points of the latent marginals, from a fixed Monte Carlo draw.
inline ThresholdSet design_thresholds(const SimDesign& ds, const DesignStructure& st, int draws = 100000)
{
    Rng rng(derive_seed(ds.structure_seed, 13));
    Vec y;
    Mat z;
    detail::draw_latent(ds, st, draws, rng, y, z);
    const std::vector<int> g = ds.levels();
    ThresholdSet th;
    th.cuts.resize(ds.p);
    std::vector<double> col(draws);
    for (int j = 0; j < ds.p; ++j) {
        for (int i = 0; i < draws; ++i) col[i] = z(i, j);
        std::sort(col.begin(), col.end());
        Vec c(g[j] - 1);
        for (int k = 1; k < g[j]; ++k) {
            const double pos = static_cast<double>(k) / g[j] * (draws - 1);
            const auto lo = static_cast<std::size_t>(std::floor(pos));
            const double frac = pos - static_cast<double>(lo);
            c(k - 1) = col[lo] + frac * (col[std::min<std::size_t>(lo + 1, draws - 1)] - col[lo]);
        }
        th.cuts[j] = c;
    }
    return th;
}

/// Everything about a design that does not depend on the replicate seed.
struct PreparedDesign
{
    SimDesign design;
    DesignStructure structure;
    ThresholdSet thresholds;

    explicit PreparedDesign(const SimDesign& ds)
        : design(ds), structure(design_structure(ds)), thresholds(design_thresholds(ds, structure)) {}
};

/// One replicate with seed `seed` (overrides design.seed).
inline SimData generate(const PreparedDesign& pd, std::uint64_t seed)
{
    const SimDesign& ds = pd.design;
    const DesignStructure& st = pd.structure;
    Rng rng(derive_seed(seed, 17));
    Vec y;
    Mat z;
    detail::draw_latent(ds, st, ds.n, rng, y, z);
    IMat x(ds.n, ds.p);
    for (int i = 0; i < ds.n; ++i) {
        for (int j = 0; j < ds.p; ++j) x(i, j) = pd.thresholds.discretize(j, z(i, j));
    }
    SimData out;
    out.data.x = x;
    out.data.y = y;
    out.data.g = ds.levels();
    out.data.response_name = "y";
    for (int j = 0; j < ds.p; ++j) out.data.predictor_names.push_back("X" + std::to_string(j + 1));
    out.truth.alpha = ds.d > 0 ? linalg::orthonormal_basis(st.scale.asDiagonal() * st.alpha) : Mat(ds.p, 0);
    out.truth.Z = z;
    out.truth.thresholds = pd.thresholds;
    out.truth.S0 = st.S0;
    const Vec inv = st.scale.cwiseInverse();
    out.truth.delta = inv.asDiagonal() * st.delta * inv.asDiagonal();
    return out;
}

inline SimData generate(const SimDesign& ds) { return generate(PreparedDesign(ds), ds.seed); }

// ---------------------------------------------------------------------------
// Metrics

/// Largest principal angle between span(A) and span(B), in degrees.
inline double subspace_angle(const Mat& A, const Mat& B)
{
    if (A.rows() != B.rows()) ordred::detail::fail_validation("InvalidArgument", "row counts differ");
    const Mat qa = linalg::orthonormal_basis(A);
    const Mat qb = linalg::orthonormal_basis(B);
    if (qa.cols() == 0 || qb.cols() == 0) return 0.0;
    const Mat& small = qa.cols() <= qb.cols() ? qa : qb;
    const Mat& large = qa.cols() <= qb.cols() ? qb : qa;
    Eigen::JacobiSVD<Mat> svd(small.transpose() * large);
    const double cmin = std::clamp(svd.singularValues().minCoeff(), 0.0, 1.0);
    double rad;
    if (cmin > 0.7) {
        // sine form is accurate near zero
        const Mat resid = small - large * (large.transpose() * small);
        Eigen::JacobiSVD<Mat> rs(resid);
        rad = std::asin(std::clamp(rs.singularValues().maxCoeff(), 0.0, 1.0));
    } else {
        rad = std::acos(cmin);
    }
    return rad * 180.0 / M_PI;
}

/// Empirical distance correlation between the rows of U and V.
inline double dcor(const Mat& U, const Mat& V)
{
    const Eigen::Index n = U.rows();
    if (V.rows() != n) ordred::detail::fail_validation("InvalidArgument", "row counts differ");
    if (n < 4) ordred::detail::fail_validation("InvalidArgument", "dcor needs n >= 4");
    auto centered = [n](const Mat& X) {
        Mat D(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            D(i, i) = 0.0;
            for (Eigen::Index j = i + 1; j < n; ++j) {
                D(i, j) = D(j, i) = (X.row(i) - X.row(j)).norm();
            }
        }
        const Vec rm = D.rowwise().mean();
        const double gm = rm.mean();
        D.colwise() -= rm;
        D.rowwise() -= rm.transpose();
        D.array() += gm;
        return D;
    };
    const Mat A = centered(U), B = centered(V);
    const double vab = (A.cwiseProduct(B)).mean();
    const double vaa = A.cwiseAbs2().mean();
    const double vbb = B.cwiseAbs2().mean();
    if (!(vaa > 0.0) || !(vbb > 0.0)) {
        ordred::detail::fail_numerical("DegenerateSample", "zero distance variance");
    }
    const double r2 = std::max(vab, 0.0) / std::sqrt(vaa * vbb);
    return std::min(1.0, std::sqrt(r2));
}

struct SelectionMetrics
{
    double pr_contain = 0.0;
    double mean_card = 0.0;
    double sd_card = 0.0;
};

inline SelectionMetrics selection_metrics(const std::vector<int>& S0, const std::vector<std::vector<int>>& runs)
{
    if (runs.empty()) ordred::detail::fail_validation("InvalidArgument", "need at least one run");
    SelectionMetrics m;
    double sum = 0.0, sum2 = 0.0;
    int contain = 0;
    for (const auto& run : runs) {
        bool all = true;
        for (int s : S0) all = all && std::find(run.begin(), run.end(), s) != run.end();
        contain += all;
        sum += static_cast<double>(run.size());
        sum2 += static_cast<double>(run.size()) * static_cast<double>(run.size());
    }
    const double k = static_cast<double>(runs.size());
    m.pr_contain = contain / k;
    m.mean_card = sum / k;
    m.sd_card = runs.size() > 1 ? std::sqrt(std::max(0.0, (sum2 - k * m.mean_card * m.mean_card) / (k - 1.0))) : 0.0;
    return m;
}

/**
 * Household-survey analogue: a latent welfare factor drives income and a block
 * of asset indicators, while a stronger nuisance factor (household composition)
 * drives the remaining indicators and dominates the code covariance.
 */
struct IncomeDesign
{
    int n = 400;
    int p_welfare = 6;
    int p_nuisance = 6;
    double welfare_loading = 0.7;
    double nuisance_loading = 1.2;
    /// log-income = income_slope * welfare + income_noise * N(0, 1)
    double income_slope = 0.6;
    double income_noise = 0.5;
    std::uint64_t seed = 1;
};

inline OrdinalDataset generate_income(const IncomeDesign& ds)
{
    const int p = ds.p_welfare + ds.p_nuisance;
    Rng rng(derive_seed(ds.seed, 0x696e63ULL));
    std::normal_distribution<double> nd;
    Mat z(ds.n, p);
    Vec y(ds.n);
    for (int i = 0; i < ds.n; ++i) {
        const double w = nd(rng), u = nd(rng);
        for (int j = 0; j < p; ++j) {
            const double load = j < ds.p_welfare ? ds.welfare_loading : ds.nuisance_loading;
            z(i, j) = load * (j < ds.p_welfare ? w : u) + nd(rng);
        }
        y(i) = std::exp(ds.income_slope * w + ds.income_noise * nd(rng));
    }
    const std::vector<int> g = cycling_levels(p);
    OrdinalDataset out;
    out.x.resize(ds.n, p);
    for (int j = 0; j < p; ++j) {
        const double sd = std::sqrt(1.0 + std::pow(j < ds.p_welfare ? ds.welfare_loading : ds.nuisance_loading, 2));
        for (int i = 0; i < ds.n; ++i) {
            // equal-probability cells of the latent marginal
            const double u = normal::cdf(z(i, j) / sd);
            out.x(i, j) = std::min(g[j], 1 + static_cast<int>(std::floor(u * g[j])));
        }
        out.predictor_names.push_back("X" + std::to_string(j + 1));
    }
    out.y = y;
    out.g = g;
    out.response_name = "income";
    return out;
}

// ---------------------------------------------------------------------------
// Named designs

/// Approximate-versus-exact validation design: p = 5, G_j = 4, r = 2.
inline SimDesign validation_design(int n = 100)
{
    SimDesign ds;
    ds.n = n;
    ds.p = 5;
    ds.d = 2;
    ds.r = 2;
    ds.g = {4};
    ds.xi_scale = 2.5;
    ds.b_scale = -0.5;
    return ds;
}

/// Angle-comparison design: p = 20, G_j in {3, 4, 5}.
inline SimDesign comparison_design(int n = 500, ErrorKind err = ErrorKind::normal)
{
    SimDesign ds;
    ds.n = n;
    ds.p = 20;
    ds.d = 2;
    ds.r = 2;
    ds.g = cycling_levels(20);
    ds.xi_scale = 3.5;
    ds.error_kind = err;
    return ds;
}

/// Dimension-inference design: p = 10, true d = 2.
inline SimDesign dimension_design(int n = 300)
{
    SimDesign ds = comparison_design(n);
    ds.xi_scale = 1.0;
    ds.p = 10;
    ds.g = cycling_levels(10);
    return ds;
}

/// Variable-selection design: four active predictors out of p = 20.
inline SimDesign selection_design(int n = 500, double rho = 0.0)
{
    SimDesign ds = comparison_design(n);
    ds.xi_scale = 1.0;
    ds.alpha_rule = AlphaRule::sparse_block;
    ds.delta_c = 4.0;
    ds.rho = rho;
    ds.b_scale = 12.0;
    ds.dense_delta_basis = true;
    return ds;
}

} // namespace sim
} // namespace ordred
