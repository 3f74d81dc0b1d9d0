#include <gtest/gtest.h>
#include <ordred/bench.hpp>
#include "checks.hpp"

using namespace ordred;

namespace {

/// Hand-built model with p predictors, identity level maps and the given slices.
FittedModel toy_model(const Mat& delta, const Mat& alpha, const Mat& xi, const std::vector<Vec>& cuts, const Mat& fbar,
                      const Vec& prior)
{
    FittedModel m;
    m.params = {delta, alpha, xi};
    m.d = static_cast<int>(alpha.cols());
    m.thresholds.cuts = cuts;
    for (const Vec& c : cuts) {
        LevelMap lm;
        lm.levels = static_cast<int>(c.size()) + 1;
        for (int k = 1; k <= lm.levels; ++k) lm.to.push_back(k);
        m.level_maps.push_back(lm);
    }
    m.slices.fbar = fbar;
    m.slices.prior = prior;
    m.seed = 3;
    return m;
}

FittedModel fitted(std::uint64_t seed, int d = 2)
{
    const auto sd = checks::small_sample(seed, 100, 5);
    return fit(sd.data, BasisSpec::polynomial(2), d);
}

ReduceOptions quick()
{
    ReduceOptions ro;
    ro.points = 256;
    return ro;
}

} // namespace

TEST(PosteriorWeights, IdenticalSlicesSplitEvenly)
{
    FittedModel m = fitted(1);
    m.slices.fbar = m.slices.fbar.topRows(1).replicate(2, 1);
    m.slices.prior = Vec::Constant(2, 0.5);
    const Vec w = posterior_weights(Eigen::VectorXi::Constant(5, 2), m, quick());
    EXPECT_NEAR(w(0), 0.5, 1e-12);
    EXPECT_NEAR(w(1), 0.5, 1e-12);
}

TEST(PosteriorWeights, NoSignalReturnsPrior)
{
    const FittedModel m = fitted(2, 0);
    const Vec w = posterior_weights(Eigen::VectorXi::Constant(5, 3), m, quick());
    EXPECT_LT((w - m.slices.prior).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PosteriorWeights, BivariateGridOracle)
{
    Mat delta(2, 2);
    delta << 1.0, 0.4, 0.4, 1.0;
    const Mat alpha = (Mat(2, 1) << 0.6, 0.8).finished();
    const Mat xi = (Mat(1, 1) << 1.5).finished();
    const Mat fbar = (Mat(3, 1) << -1.0, 0.0, 1.2).finished();
    const Vec prior = (Vec(3) << 0.3, 0.5, 0.2).finished();
    const std::vector<Vec> cuts = {(Vec(2) << -0.5, 0.6).finished(), (Vec(1) << 0.1).finished()};
    FittedModel m = toy_model(delta, alpha, xi, cuts, fbar, prior);
    const Mat psi = m.params.psi();
    ReduceOptions ro;
    ro.points = 1 << 14;
    for (int a = 1; a <= 3; ++a) {
        for (int b = 1; b <= 2; ++b) {
            const Eigen::VectorXi x = (Eigen::VectorXi(2) << a, b).finished();
            const Vec w = posterior_weights(x, m, ro);
            const Rectangle cell = m.thresholds.cell(x);
            Vec oracle(3);
            for (int s = 0; s < 3; ++s) {
                const Vec mu = psi * fbar.row(s).transpose();
                oracle(s) = prior(s) * checks::bvn_rect_quad(0.4, cell.lower(0) - mu(0), cell.upper(0) - mu(0),
                                                              cell.lower(1) - mu(1), cell.upper(1) - mu(1));
            }
            oracle /= oracle.sum();
            EXPECT_LT((w - oracle).cwiseAbs().maxCoeff(), 1e-3) << "x = (" << a << ", " << b << ")";
        }
    }
}

TEST(PosteriorWeights, SumToOne)
{
    const auto c = checks::weights_sum_to_one();
    EXPECT_TRUE(c.pass) << c.detail;
}

TEST(Reduce, HalfNormalSymmetry)
{
    const std::vector<Vec> cuts = {(Vec(1) << 0.0).finished()};
    FittedModel m = toy_model(Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Zero(1, 1), cuts, Mat::Zero(1, 1),
                              Vec::Ones(1));
    const double lo = reduce((Eigen::VectorXi(1) << 1).finished(), m)(0);
    const double hi = reduce((Eigen::VectorXi(1) << 2).finished(), m)(0);
    EXPECT_NEAR(lo, -std::sqrt(2.0 / M_PI), 1e-12);
    EXPECT_NEAR(hi, std::sqrt(2.0 / M_PI), 1e-12);
}

TEST(Reduce, RotationEquivariance)
{
    const FittedModel m = fitted(3);
    FittedModel rot = m;
    const double c = std::cos(0.7), s = std::sin(0.7);
    const Mat O = (Mat(2, 2) << c, -s, s, c).finished();
    rot.params.alpha = m.params.alpha * O;
    rot.params.xi = O.transpose() * m.params.xi;
    const auto sd = checks::small_sample(3, 100, 5);
    const Mat r = reduce_dataset(sd.data.x, m, quick()).r;
    const Mat rr = reduce_dataset(sd.data.x, rot, quick()).r;
    EXPECT_LT((rr - r * O).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Reduce, PureAndCached)
{
    const FittedModel m = fitted(4);
    Reducer red(m, quick());
    const Eigen::VectorXi x = (Eigen::VectorXi(5) << 1, 2, 3, 4, 2).finished();
    const Vec a = red.reduce(x);
    const Vec b = red.reduce(x);
    EXPECT_EQ(a, b);
    EXPECT_EQ(red.cache_stats().misses, 1u);
    EXPECT_EQ(red.cache_stats().hits, 1u);
    EXPECT_EQ(a, reduce(x, m, quick()));
}

TEST(Reduce, RecodeInvariance)
{
    const auto sd = checks::small_sample(5, 100, 4);
    const FittedModel m = fit(sd.data, BasisSpec::polynomial(2), 2);
    Table t;
    for (int j = 0; j < 4; ++j) t.header.push_back("X" + std::to_string(j + 1));
    t.header.push_back("y");
    for (int i = 0; i < sd.data.n(); ++i) {
        std::vector<std::string> row;
        for (int j = 0; j < 4; ++j) row.push_back(std::to_string(5 * sd.data.x(i, j) - 3));
        row.push_back(csv::format_double(sd.data.y(i)));
        t.rows.push_back(row);
    }
    const OrdinalDataset re = validate_dataset(t);
    const FittedModel mr = fit(re, BasisSpec::polynomial(2), 2);
    const Mat a = reduce_dataset(sd.data.x, m, quick()).r;
    const Mat b = reduce_dataset(encode_predictors(t, mr), mr, quick()).r;
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Reduce, RejectsUnknownCode)
{
    const FittedModel m = fitted(6);
    EXPECT_THROW(reduce((Eigen::VectorXi(5) << 1, 2, 3, 4, 9).finished(), m), ValidationError);
}

TEST(Tabulate, RefusesLargeSpace)
{
    EXPECT_NEAR(static_cast<double>(table_bytes(std::vector<int>(20, 3), 1)), 27894275208.0, 1.0);
    const std::vector<Vec> cuts(20, (Vec(2) << -0.5, 0.5).finished());
    Mat alpha = Mat::Zero(20, 1);
    alpha(0) = 1.0;
    const FittedModel m = toy_model(Mat::Identity(20, 20), alpha, Mat::Ones(1, 1), cuts, Mat::Zero(1, 1), Vec::Ones(1));
    const Tabulation t = tabulate(m, 8e9L);
    EXPECT_FALSE(t.built);
    EXPECT_GT(t.bytes, 2.5e10L);
}

TEST(Tabulate, BuildsSmallSpace)
{
    const std::vector<Vec> cuts(3, (Vec(1) << 0.0).finished());
    Mat alpha = Mat::Zero(3, 1);
    alpha(1) = 1.0;
    Mat delta = Mat::Identity(3, 3);
    delta(0, 1) = delta(1, 0) = 0.3;
    const Mat fbar = (Mat(2, 1) << -0.5, 0.5).finished();
    const FittedModel m = toy_model(delta, alpha, Mat::Ones(1, 1), cuts, fbar, Vec::Constant(2, 0.5));
    const Tabulation t = tabulate(m, 1e6L);
    ASSERT_TRUE(t.built);
    EXPECT_EQ(t.table.rows(), 8);
    for (int k = 0; k < 8; ++k) {
        const Eigen::VectorXi x = (Eigen::VectorXi(3) << 1 + (k & 1), 1 + ((k >> 1) & 1), 1 + ((k >> 2) & 1)).finished();
        EXPECT_EQ(t.lookup(x), reduce(x, m));
    }
}

TEST(SesIndex, NormalizedAndOriented)
{
    const Mat r = (Mat(4, 1) << 3.0, 1.0, 2.0, 0.0).finished();
    const Vec y = (Vec(4) << 0.0, 2.0, 1.0, 3.0).finished();
    const SesIndex s = ses_index(r, y);
    EXPECT_TRUE(s.flipped);
    EXPECT_EQ(s.index.minCoeff(), 0.0);
    EXPECT_EQ(s.index.maxCoeff(), 1.0);
    EXPECT_GT((s.index.array() - s.index.mean()).matrix().dot((y.array() - y.mean()).matrix()), 0.0);
}

TEST(SesIndex, Errors)
{
    try {
        ses_index(Mat::Ones(4, 1), Vec::LinSpaced(4, 0, 1));
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.kind(), "ZeroVariance");
    }
    try {
        ses_index(Mat::Ones(4, 2), Vec::LinSpaced(4, 0, 1));
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_EQ(e.kind(), "DimensionNotOne");
    }
}

TEST(SesIndex, IncomeGeneratorBeatsPca)
{
    bench::SesOptions o;
    o.reps = 3;
    o.seed = 100;
    o.design.n = 200;
    o.reduce.points = 128;
    int wins = 0;
    for (const bench::SesRow& row : bench::ses_proxy(o)) wins += row.r2_supervised > row.r2_pca;
    EXPECT_GE(wins, 2);
}
