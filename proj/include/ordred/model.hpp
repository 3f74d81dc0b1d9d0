#pragma once
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>
#include <ordred/error.hpp>
#include <ordred/linalg.hpp>
#include <ordred/normal.hpp>

namespace ordred {

/**
 * Observed sample: an n x p matrix of ordinal codes plus the response.
 *
 * Codes are always 1..G_j internally. For a categorical response `y` holds the
 * class index (0-based) and `response_labels` the class names.
 */
struct OrdinalDataset
{
    IMat x;
    Vec y;
    std::vector<int> g;
    bool categorical_response = false;
    std::vector<std::string> response_labels;
    std::string response_name = "y";
    std::vector<std::string> predictor_names;
    /// level_labels[j][c-1] is the original label of internal code c.
    std::vector<std::vector<std::string>> level_labels;

    int n() const { return static_cast<int>(x.rows()); }
    int p() const { return static_cast<int>(x.cols()); }

    /// Checks every invariant; throws ValidationError.
    void validate() const
    {
        if (x.rows() < 2) detail::fail_validation("InvalidDataset", "need at least 2 observations");
        if (x.cols() < 1) detail::fail_validation("InvalidDataset", "need at least 1 predictor");
        if (y.size() != x.rows()) detail::fail_validation("InvalidDataset", "response length does not match rows");
        if (static_cast<int>(g.size()) != p()) detail::fail_validation("InvalidDataset", "level counts do not match columns");
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            if (!std::isfinite(y(i))) detail::fail_validation("MissingValue", "response has a missing entry", response_name);
        }
        for (int j = 0; j < p(); ++j) {
            const std::string name = column_name(j);
            if (g[j] < 2) detail::fail_validation("NonOrdinalColumn", "column has fewer than 2 levels", name);
            for (int i = 0; i < n(); ++i) {
                if (x(i, j) < 1 || x(i, j) > g[j]) {
                    detail::fail_validation("InvalidDataset", "code outside 1..G_j", name);
                }
            }
        }
    }

    std::string column_name(int j) const
    {
        if (j < static_cast<int>(predictor_names.size())) return predictor_names[j];
        return "X" + std::to_string(j + 1);
    }

    /// Builds a dataset from codes already in 1..G_j, with G_j taken as the column maxima.
    static OrdinalDataset from_codes(IMat codes, Vec response, bool categorical = false)
    {
        OrdinalDataset d;
        d.g.resize(codes.cols());
        for (Eigen::Index j = 0; j < codes.cols(); ++j) d.g[j] = codes.col(j).maxCoeff();
        d.x = std::move(codes);
        d.y = std::move(response);
        d.categorical_response = categorical;
        d.validate();
        return d;
    }

    OrdinalDataset subset(const std::vector<int>& rows) const
    {
        OrdinalDataset out = *this;
        out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
        out.y.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) {
            out.x.row(k) = x.row(rows[k]);
            out.y(k) = y(rows[k]);
        }
        return out;
    }
};

/// Latent interval of one coordinate or a whole rectangle C(x, Theta).
struct Rectangle
{
    Vec lower;
    Vec upper;

    int dim() const { return static_cast<int>(lower.size()); }
    bool valid() const
    {
        if (lower.size() != upper.size()) return false;
        for (Eigen::Index j = 0; j < lower.size(); ++j) {
            if (!(lower(j) < upper(j))) return false;
        }
        return true;
    }
    static Rectangle whole_space(int p)
    {
        return {Vec::Constant(p, -normal::inf), Vec::Constant(p, normal::inf)};
    }
};

/// Per-predictor strictly increasing cut points; -inf/+inf sentinels are implicit.
struct ThresholdSet
{
    std::vector<Vec> cuts;

    int p() const { return static_cast<int>(cuts.size()); }
    int levels(int j) const { return static_cast<int>(cuts[j].size()) + 1; }

    /// Lower bound of cell `code` (1-based) for predictor j.
    double lower(int j, int code) const
    {
        return code <= 1 ? -normal::inf : cuts[j](code - 2);
    }
    double upper(int j, int code) const
    {
        return code >= levels(j) ? normal::inf : cuts[j](code - 1);
    }

    Rectangle cell(const Eigen::Ref<const Eigen::VectorXi>& codes) const
    {
        Rectangle r{Vec(p()), Vec(p())};
        for (int j = 0; j < p(); ++j) {
            r.lower(j) = lower(j, codes(j));
            r.upper(j) = upper(j, codes(j));
        }
        return r;
    }

    /// Code of the cell containing z_j: X_j = g iff theta_{g-1} <= z < theta_g.
    int discretize(int j, double z) const
    {
        const Vec& c = cuts[j];
        const auto it = std::upper_bound(c.data(), c.data() + c.size(), z);
        return static_cast<int>(it - c.data()) + 1;
    }

    void validate() const
    {
        for (int j = 0; j < p(); ++j) {
            for (Eigen::Index k = 0; k < cuts[j].size(); ++k) {
                if (!std::isfinite(cuts[j](k))) {
                    detail::fail_numerical("InvalidThresholds", "non-finite cut point");
                }
                if (k > 0 && !(cuts[j](k - 1) < cuts[j](k))) {
                    detail::fail_numerical("InvalidThresholds", "cut points not strictly increasing");
                }
            }
        }
    }
};

/**
 * Parameters {Delta, alpha, xi} of Z | Y = Delta alpha xi fbar_Y + eps, eps ~ N(0, Delta).
 *
 * Delta is p x p SPD with unit diagonal, alpha is p x d semi-orthogonal,
 * xi is d x r with full row rank d.
 */
struct ModelParams
{
    Mat delta;
    Mat alpha;
    Mat xi;

    int p() const { return static_cast<int>(delta.rows()); }
    int d() const { return static_cast<int>(alpha.cols()); }
    int r() const { return static_cast<int>(xi.cols()); }

    /// Psi = Delta alpha xi, the p x r coefficient of the latent mean on fbar_Y.
    Mat psi() const
    {
        if (d() == 0) return Mat::Zero(p(), r());
        return delta * alpha * xi;
    }

    void validate(double tol = 1e-10) const
    {
        const int pp = p();
        if (delta.cols() != pp || alpha.rows() != pp || xi.rows() != alpha.cols()) {
            detail::fail_numerical("InvalidParams", "parameter shapes are inconsistent");
        }
        if ((delta - delta.transpose()).cwiseAbs().maxCoeff() > tol) {
            detail::fail_numerical("InvalidParams", "Delta is not symmetric");
        }
        if ((delta.diagonal().array() - 1.0).abs().maxCoeff() > tol) {
            detail::fail_numerical("InvalidParams", "Delta does not have unit diagonal");
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(delta, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() <= 0.0) {
            detail::fail_numerical("InvalidParams", "Delta is not positive definite");
        }
        if (d() > 0) {
            const Mat gram = alpha.transpose() * alpha;
            if ((gram - Mat::Identity(d(), d())).cwiseAbs().maxCoeff() > tol) {
                detail::fail_numerical("InvalidParams", "alpha is not semi-orthogonal");
            }
            if (linalg::relative_min_singular(xi) <= tol) {
                detail::fail_numerical("InvalidParams", "xi is rank deficient");
            }
        }
        if (d() > std::min(r(), pp)) {
            detail::fail_numerical("InvalidParams", "d exceeds min(r, p)");
        }
    }
};

/// Choice of the fitting functions f_y.
struct BasisSpec
{
    enum class Kind { polynomial, slice };
    Kind kind = Kind::polynomial;
    /// polynomial degree r, or number of slices h
    int size = 2;

    static BasisSpec polynomial(int degree) { return {Kind::polynomial, degree}; }
    static BasisSpec slices(int h) { return {Kind::slice, h}; }

    int r() const { return kind == Kind::polynomial ? size : size - 1; }

    void validate() const
    {
        if (kind == Kind::polynomial && size < 1) {
            detail::fail_validation("InvalidBasis", "polynomial degree must be >= 1");
        }
        if (kind == Kind::slice && size < 2) {
            detail::fail_validation("InvalidBasis", "slice count must be >= 2");
        }
    }
};

/**
 * A basis fitted to a training response: knows the centering vector and, for
 * slice bases on a continuous response, the bin edges.
 */
struct Basis
{
    BasisSpec spec;
    Vec center;
    /// upper edges of slices 1..h-1 (continuous response only)
    std::vector<double> edges;
    bool categorical = false;

    int r() const { return spec.r(); }

    /// Slice index in 0..h-1. Ties go to the lower slice.
    int slice_of(double y) const
    {
        if (categorical) return static_cast<int>(y);
        int s = 0;
        for (double e : edges) {
            if (y > e) ++s;
        }
        return s;
    }

    /// Uncentered f_y.
    Vec raw(double y) const
    {
        Vec f(r());
        if (spec.kind == BasisSpec::Kind::polynomial) {
            double v = 1.0;
            for (int k = 0; k < r(); ++k) {
                v *= y;
                f(k) = v;
            }
        } else {
            f.setZero();
            const int s = slice_of(y);
            if (s < r()) f(s) = 1.0;
        }
        return f;
    }

    Vec centered(double y) const { return raw(y) - center; }

    /// Centered n x r matrix F with rows fbar_{y_i}.
    Mat matrix(const Vec& y) const
    {
        Mat F(y.size(), r());
        for (Eigen::Index i = 0; i < y.size(); ++i) F.row(i) = centered(y(i)).transpose();
        return F;
    }
};

/// Centered basis matrix together with the fitted basis that produced it.
struct BasisMatrix
{
    Basis basis;
    Mat F;
};

/// Equal-frequency slice edges; ties at an edge fall in the lower slice.
inline std::vector<double> equal_frequency_edges(const Vec& y, int h)
{
    std::vector<double> sorted(y.data(), y.data() + y.size());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<long>(sorted.size());
    std::vector<double> edges;
    for (int k = 1; k < h; ++k) {
        const long idx = (static_cast<long>(k) * n + h - 1) / h - 1;
        edges.push_back(sorted[std::clamp(idx, 0L, n - 1)]);
    }
    return edges;
}

/**
 * Builds the centered basis matrix F for response y.
 *
 * Throws ValidationError("InvalidSlice") on an empty slice and
 * NumericalError("DegenerateBasis") when F'F is singular.
 */
inline BasisMatrix build_basis(const Vec& y, const BasisSpec& spec, bool categorical = false)
{
    spec.validate();
    const Eigen::Index n = y.size();
    if (n < 2) detail::fail_validation("InvalidDataset", "need at least 2 observations");
    Basis b;
    b.spec = spec;
    b.categorical = categorical && spec.kind == BasisSpec::Kind::slice;
    if (spec.kind == BasisSpec::Kind::slice) {
        const int h = spec.size;
        if (!b.categorical) {
            if (h > n) detail::fail_validation("InvalidSlice", "more slices than observations");
            b.edges = equal_frequency_edges(y, h);
        }
        std::vector<int> counts(h, 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            const int s = b.slice_of(y(i));
            if (s < 0 || s >= h) detail::fail_validation("InvalidSlice", "response outside slice range");
            ++counts[s];
        }
        for (int s = 0; s < h; ++s) {
            if (counts[s] == 0) {
                detail::fail_validation("InvalidSlice", "slice " + std::to_string(s + 1) + " is empty");
            }
        }
    }
    b.center = Vec::Zero(spec.r());
    for (Eigen::Index i = 0; i < n; ++i) b.center += b.raw(y(i));
    b.center /= static_cast<double>(n);
    Mat F = b.matrix(y);
    const Mat FtF = F.transpose() * F;
    Eigen::JacobiSVD<Mat> svd(FtF);
    const Vec& sv = svd.singularValues();
    if (!(sv(0) > 0.0) || sv(sv.size() - 1) <= 1e-12 * sv(0)) {
        detail::fail_numerical("DegenerateBasis", "F'F is singular");
    }
    return {std::move(b), std::move(F)};
}

} // namespace ordred
