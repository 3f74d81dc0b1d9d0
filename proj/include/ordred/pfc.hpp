#pragma once
#include <ordred/error.hpp>
#include <ordred/linalg.hpp>

namespace ordred {

struct PfcFit
{
    Mat alpha;
    /// sample marginal covariance of the column-centered data
    Mat sigma;
    /// covariance of the fitted values of the regression on F
    Mat sigma_fit;
    /// eigenvalues of sigma^{-1/2} sigma_fit sigma^{-1/2}, decreasing
    Vec eigenvalues;
    /// r x p coefficients of the centered data on F
    Mat coef;
    bool ridged = false;
};

struct PfcOptions
{
    bool allow_ridge = true;
};

/**
 * Principal fitted components for continuous predictors.
 *
 * `data` is n x p (centered internally), F the centered n x r basis matrix.
 */
inline PfcFit fit_pfc(const Mat& data, const Mat& F, int d, const PfcOptions& opts = {})
{
    const Eigen::Index n = data.rows(), p = data.cols(), r = F.cols();
    if (F.rows() != n) detail::fail_validation("InvalidDataset", "basis rows do not match data rows");
    if (d < 0 || d > std::min<Eigen::Index>(r, p)) detail::fail_validation("InvalidDimension", "d must lie in 0..min(r, p)");
    const Mat xc = data.rowwise() - data.colwise().mean();
    PfcFit out;
    out.sigma = xc.transpose() * xc / static_cast<double>(n);
    const Mat ftf = F.transpose() * F;
    out.coef = ftf.ldlt().solve(F.transpose() * xc);
    const Mat fitted = F * out.coef;
    out.sigma_fit = xc.transpose() * fitted / static_cast<double>(n);
    out.sigma_fit = 0.5 * (out.sigma_fit + out.sigma_fit.transpose());

    Mat sig = out.sigma;
    Eigen::SelfAdjointEigenSolver<Mat> es(sig, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < 1e-10) {
        if (!opts.allow_ridge) detail::fail_numerical("SingularCovariance", "sample covariance is rank deficient");
        sig += (1e-8 * sig.trace() / static_cast<double>(p)) * Mat::Identity(p, p);
        out.ridged = true;
    }
    const Mat root_inv = linalg::spd_power(sig, -0.5);
    const linalg::SymEig eig = linalg::sym_eig_desc(root_inv * out.sigma_fit * root_inv);
    out.eigenvalues = eig.values;
    if (d == 0) {
        out.alpha = Mat(p, 0);
        return out;
    }
    out.alpha = linalg::orthonormal_basis(root_inv * eig.vectors.leftCols(d));
    return out;
}

} // namespace ordred
