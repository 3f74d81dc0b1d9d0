#include <gtest/gtest.h>
#include "checks.hpp"

using namespace ordred;

namespace {

EStepSummary sparse_summary(std::uint64_t seed)
{
    sim::SimDesign ds = sim::selection_design(300);
    ds.seed = seed;
    const auto sd = sim::generate(ds);
    FitOptions fo;
    const FittedModel m = fit(sd.data, BasisSpec::polynomial(2), 2, fo);
    return summary_at(sd.data, m, fo);
}

} // namespace

TEST(Penalty, ZeroLambdaIsTheMle)
{
    const EStepSummary s = sparse_summary(1);
    const PenalizedAlpha pa = fit_penalized_alpha(s, 2, 0.0);
    EXPECT_LT(sim::subspace_angle(pa.alpha, mle_alpha(s, 2)), 1e-6);
    EXPECT_FALSE(pa.all_rows_killed);
}

TEST(Penalty, ExtinctionAboveLambdaMax)
{
    const EStepSummary s = sparse_summary(2);
    const double lmax = lambda_max(s, 2);
    EXPECT_GT(lmax, 0.0);
    EXPECT_TRUE(fit_penalized_alpha(s, 2, 10.0 * lmax).all_rows_killed);
    const AlphaSolver solver = penalized_solver(10.0 * lmax);
    try {
        solver(s, 2, mle_alpha(s, 2));
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.kind(), "AllRowsKilled");
    }
}

TEST(Penalty, FeasibleAndSoftlyNested)
{
    const EStepSummary s = sparse_summary(3);
    const auto grid = default_lambda_grid(lambda_max(s, 2), 12);
    int prev = s.S.rows();
    for (double lambda : grid) {
        const PenalizedAlpha pa = fit_penalized_alpha(s, 2, lambda);
        if (pa.all_rows_killed) break;
        const Mat g = pa.alpha.transpose() * s.S * pa.alpha;
        EXPECT_LT((g - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-8);
        int active = 0;
        for (Eigen::Index j = 0; j < pa.alpha.rows(); ++j) active += pa.alpha.row(j).norm() > 0.0;
        EXPECT_LE(active, prev + 1);
        prev = active;
    }
}

TEST(Penalty, ObjectiveNeverWorseThanStart)
{
    const EStepSummary s = sparse_summary(4);
    const double lambda = 0.3 * lambda_max(s, 2);
    const PenalizedAlpha pa = fit_penalized_alpha(s, 2, lambda);
    const Mat start = s_orthonormal_mle(s, 2);
    const double start_obj = -(start.transpose() * s.S_fit * start).trace() + lambda * start.rowwise().norm().sum();
    EXPECT_LE(pa.objective, start_obj + 1e-12);
}

TEST(Penalty, DefaultGrid)
{
    const auto g = default_lambda_grid(2.0);
    ASSERT_EQ(g.size(), 30u);
    EXPECT_NEAR(g.front(), 2e-4, 1e-15);
    EXPECT_NEAR(g.back(), 2.0, 1e-12);
    for (std::size_t k = 1; k < g.size(); ++k) EXPECT_NEAR(g[k] / g[k - 1], g[1] / g[0], 1e-12);
}

TEST(SelectLambda, SingleZeroPointIsUnpenalized)
{
    const auto sd = checks::small_sample(8, 120, 5);
    FitOptions fo;
    const RegularizedFit rf = select_lambda(sd.data, BasisSpec::polynomial(2), 2, {0.0}, fo);
    const FittedModel m = fit(sd.data, BasisSpec::polynomial(2), 2, fo);
    EXPECT_TRUE(checks::same_model(rf.model, m));
    EXPECT_EQ(rf.lambda, 0.0);
    EXPECT_EQ(rf.active_set.size(), 5u);
}

TEST(SelectLambda, RejectsBadGrid)
{
    const auto sd = checks::small_sample(8, 60, 3);
    EXPECT_THROW(select_lambda(sd.data, BasisSpec::polynomial(2), 1, {}, {}), ValidationError);
    EXPECT_THROW(select_lambda(sd.data, BasisSpec::polynomial(2), 1, {0.2, 0.1}, {}), ValidationError);
    EXPECT_THROW(select_lambda(sd.data, BasisSpec::polynomial(2), 1, {-1.0}, {}), ValidationError);
}

TEST(SelectLambda, InactiveRowsExactlyZero)
{
    sim::SimDesign ds = sim::selection_design(500);
    ds.seed = 11;
    const auto sd = sim::generate(ds);
    FitOptions fo;
    const double lmax = lambda_max_for(sd.data, BasisSpec::polynomial(2), 2, fo);
    const RegularizedFit rf = select_lambda(sd.data, BasisSpec::polynomial(2), 2, default_lambda_grid(lmax), fo);
    for (int j = 0; j < sd.data.p(); ++j) {
        const bool active = std::find(rf.active_set.begin(), rf.active_set.end(), j) != rf.active_set.end();
        if (!active) EXPECT_EQ(rf.model.params.alpha.row(j).norm(), 0.0);
    }
    EXPECT_FALSE(rf.active_set.empty());
    EXPECT_FALSE(rf.criterion_trace.empty());
}

TEST(InformationCriterion, DegreesOfFreedom)
{
    EXPECT_EQ(ic_dof(4, 2, 10, 10, 30), 119.0);
}

TEST(Folds, BalancedAndDeterministic)
{
    const auto a = detail::fold_ids(103, 10, 5);
    EXPECT_EQ(a, detail::fold_ids(103, 10, 5));
    EXPECT_NE(a, detail::fold_ids(103, 10, 6));
    std::vector<int> count(10, 0);
    for (int f : a) ++count[f];
    EXPECT_EQ(*std::min_element(count.begin(), count.end()), 10);
    EXPECT_EQ(*std::max_element(count.begin(), count.end()), 11);
}

TEST(LackOfFit, ZeroAtFullModel)
{
    const auto c = checks::full_model_statistic();
    EXPECT_TRUE(c.pass) << c.detail;
}

TEST(LackOfFit, NonNegativeAndDecreasing)
{
    for (int f = 0; f < 3; ++f) {
        sim::SimDesign ds = sim::dimension_design(200);
        ds.seed = 40 + f;
        const auto sd = sim::generate(ds);
        DimensionFits fits(sd.data, BasisSpec::polynomial(4), FitOptions{});
        const double qp = std::abs(q_partial(fits.summary(fits.d_max()), Mat::Identity(10, 10)));
        double prev = normal::inf;
        for (int m = 0; m <= fits.d_max(); ++m) {
            const double v = fits.statistic(m);
            EXPECT_GE(v, -1e-6 * qp);
            EXPECT_LE(v, prev + 1e-3 * qp);
            prev = v;
        }
    }
}

TEST(Permutation, StrongSignalRejectsZero)
{
    const auto sd = checks::small_sample(3, 100, 5);
    PermutationOptions po;
    po.B = 100;
    po.level = 0.01;
    po.reduce.points = 256;
    DimensionFits fits(sd.data, BasisSpec::polynomial(2), FitOptions{});
    const DimensionDecision dd = permutation_select(fits, po);
    ASSERT_FALSE(dd.diagnostics.empty());
    EXPECT_EQ(dd.diagnostics[0].exceed, 0);
    EXPECT_GE(dd.d_hat, 1);
}

TEST(Permutation, RejectsBadOptions)
{
    const auto sd = checks::small_sample(3, 60, 3);
    PermutationOptions po;
    po.B = 0;
    EXPECT_THROW(permutation_select(sd.data, BasisSpec::polynomial(2), {}, po), ValidationError);
    po.B = 10;
    po.level = 1.5;
    EXPECT_THROW(permutation_select(sd.data, BasisSpec::polynomial(2), {}, po), ValidationError);
}

TEST(Permutation, NullCalibrationSmall)
{
    const auto c = checks::permutation_null(60, 0.05, 60);
    // 60 seeds: allow 3 binomial standard errors at this size
    const double rate = std::stod(c.detail.substr(5, c.detail.find(' ', 5) - 5));
    EXPECT_LE(rate, 0.05 + 3.0 * std::sqrt(0.05 * 0.95 / 60)) << c.detail;
}

TEST(InformationCriterion, SelectsWithinRange)
{
    const auto sd = checks::small_sample(5, 150, 5);
    DimensionFits fits(sd.data, BasisSpec::polynomial(2), FitOptions{});
    for (bool bic : {false, true}) {
        const DimensionDecision dd = ic_select(fits, bic);
        EXPECT_GE(dd.d_hat, 0);
        EXPECT_LE(dd.d_hat, 2);
        EXPECT_EQ(dd.diagnostics.size(), 3u);
    }
    // strong signal: the no-reduction model is never preferred
    EXPECT_GT(ic_select(fits, true).d_hat, 0);
}

TEST(CrossValidation, OneSeRulePrefersSmallerDimension)
{
    sim::SimDesign ds = sim::validation_design(80);
    ds.p = 3;
    ds.d = 0;
    ds.seed = 17;
    const auto sd = sim::generate(ds);
    CvOptions cv;
    cv.folds = 5;
    cv.reduce.points = 128;
    const DimensionDecision plain = cv_select(sd.data, BasisSpec::polynomial(2), FitOptions{}, cv);
    cv.one_se = true;
    const DimensionDecision dd = cv_select(sd.data, BasisSpec::polynomial(2), FitOptions{}, cv);
    ASSERT_EQ(dd.diagnostics.size(), 3u);
    const auto best = std::min_element(dd.diagnostics.begin(), dd.diagnostics.end(),
                                       [](const DimCandidate& a, const DimCandidate& b) { return a.value < b.value; });
    EXPECT_EQ(plain.d_hat, best->d);
    EXPECT_LE(dd.d_hat, best->d);
    EXPECT_LE(dd.diagnostics[dd.d_hat].value, best->value + best->se + 1e-12);
}
