#pragma once
#include <algorithm>
#include <cmath>
#include <Eigen/Dense>
#include <ordred/error.hpp>

namespace ordred {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using IMat = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

namespace linalg {

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
struct SymEig
{
    Vec values;
    Mat vectors;
};

inline SymEig sym_eig_desc(const Mat& A)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()));
    if (es.info() != Eigen::Success) {
        detail::fail_numerical("EigenFailure", "symmetric eigensolver did not converge");
    }
    const Eigen::Index n = A.rows();
    SymEig out{Vec(n), Mat(n, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values(i) = es.eigenvalues()(n - 1 - i);
        out.vectors.col(i) = es.eigenvectors().col(n - 1 - i);
    }
    return out;
}

/// A^{power} for symmetric positive definite A.
inline Mat spd_power(const Mat& A, double power)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()));
    const Vec& ev = es.eigenvalues();
    if (ev.minCoeff() <= 0.0) {
        detail::fail_numerical("NotPositiveDefinite", "matrix is not positive definite");
    }
    const Vec d = ev.array().pow(power).matrix();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

inline Mat spd_inverse(const Mat& A)
{
    Eigen::LLT<Mat> llt(0.5 * (A + A.transpose()));
    if (llt.info() != Eigen::Success) {
        detail::fail_numerical("NotPositiveDefinite", "matrix is not positive definite");
    }
    return llt.solve(Mat::Identity(A.rows(), A.cols()));
}

inline double log_det_spd(const Mat& A)
{
    if (A.rows() == 0) return 0.0;
    Eigen::LLT<Mat> llt(0.5 * (A + A.transpose()));
    if (llt.info() != Eigen::Success) {
        detail::fail_numerical("NotPositiveDefinite", "matrix is not positive definite");
    }
    const Mat& L = llt.matrixLLT();
    double s = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i) s += std::log(L(i, i));
    return 2.0 * s;
}

/// Ratio of extreme eigenvalues of a symmetric matrix; +inf when not PD.
inline double condition_number(const Mat& A)
{
    if (A.rows() == 0) return 1.0;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (lo <= 0.0) return std::numeric_limits<double>::infinity();
    return hi / lo;
}

/// Flip column signs so that the entry of largest magnitude is positive.
inline void canonical_signs(Mat& A)
{
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
        Eigen::Index imax = 0;
        A.col(j).cwiseAbs().maxCoeff(&imax);
        if (A(imax, j) < 0.0) A.col(j) *= -1.0;
    }
}

/// Orthonormal basis of span(A) (thin QR), columns sign-canonicalized.
/// If `r_factor` is given it receives R with A = Q * R (after the sign fix).
inline Mat orthonormal_basis(const Mat& A, Mat* r_factor = nullptr)
{
    const Eigen::Index p = A.rows(), k = A.cols();
    if (k == 0) {
        if (r_factor) r_factor->resize(0, 0);
        return Mat(p, 0);
    }
    Eigen::HouseholderQR<Mat> qr(A);
    Mat Q = qr.householderQ() * Mat::Identity(p, k);
    Mat R = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    const double scale = R.diagonal().cwiseAbs().maxCoeff();
    if (!(scale > 0.0) || R.diagonal().cwiseAbs().minCoeff() <= 1e-12 * scale) {
        detail::fail_numerical("RankDeficient", "matrix does not have full column rank");
    }
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::Index imax = 0;
        Q.col(j).cwiseAbs().maxCoeff(&imax);
        if (Q(imax, j) < 0.0) {
            Q.col(j) *= -1.0;
            R.row(j) *= -1.0;
        }
    }
    if (r_factor) *r_factor = R;
    return Q;
}

/// Orthonormal basis of the orthogonal complement of span(A), A with orthonormal columns.
inline Mat orthogonal_complement(const Mat& A)
{
    const Eigen::Index p = A.rows(), k = A.cols();
    if (k == 0) return Mat::Identity(p, p);
    const Mat P = Mat::Identity(p, p) - A * A.transpose();
    SymEig e = sym_eig_desc(P);
    Mat C = e.vectors.leftCols(p - k);
    canonical_signs(C);
    return C;
}

/// Smallest singular value relative to the largest.
inline double relative_min_singular(const Mat& A)
{
    if (A.size() == 0) return 1.0;
    Eigen::JacobiSVD<Mat> svd(A);
    const Vec& s = svd.singularValues();
    if (s(0) == 0.0) return 0.0;
    return s(s.size() - 1) / s(0);
}

} // namespace linalg
} // namespace ordred
