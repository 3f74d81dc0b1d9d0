#pragma once
// Oracle and property checks shared by the unit tests and the acceptance runner.
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <ordred/ordred.hpp>

namespace ordred {
namespace checks {

struct Check
{
    std::string name;
    bool pass = false;
    std::string detail;
};

inline std::string fmt(double v, int prec = 3)
{
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Independent oracles

/// E(t), E(t^2) of N(0,1) restricted to [a, b] by composite 30-point Gauss-Legendre.
inline std::pair<double, double> quad_std_moments(double a, double b)
{
    using G = boost::math::quadrature::gauss<double, 30>;
    const double c = std::clamp(0.0, a, b);
    const double lo = std::max(a, c - 40.0), hi = std::min(b, c + 40.0);
    const int panels = std::max(1, static_cast<int>(std::ceil((hi - lo) / 0.25)));
    const double h = (hi - lo) / panels;
    double i0 = 0.0, i1 = 0.0, i2 = 0.0;
    for (int k = 0; k < panels; ++k) {
        const double l = lo + k * h;
        // weight rescaled so its peak in the interval is 1
        i0 += G::integrate([c](double t) { return std::exp(-0.5 * (t - c) * (t + c)); }, l, l + h);
        i1 += G::integrate([c](double t) { return t * std::exp(-0.5 * (t - c) * (t + c)); }, l, l + h);
        i2 += G::integrate([c](double t) { return t * t * std::exp(-0.5 * (t - c) * (t + c)); }, l, l + h);
    }
    return {i1 / i0, i2 / i0};
}

/// P(lo <= Z <= hi) for a standardized bivariate normal, by 1-D quadrature of
/// phi(x) times the conditional probability of the second coordinate.
inline double bvn_rect_quad(double rho, double l1, double u1, double l2, double u2)
{
    using boost::math::quadrature::gauss_kronrod;
    const double s = std::sqrt(1.0 - rho * rho);
    auto f = [&](double x) {
        const double hi = std::isinf(u2) ? 1.0 : normal::cdf((u2 - rho * x) / s);
        const double lo = std::isinf(l2) ? 0.0 : normal::cdf((l2 - rho * x) / s);
        return normal::pdf(x) * (hi - lo);
    };
    const double a = std::max(l1, -40.0), b = std::min(u1, 40.0);
    return gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-11);
}

/// Composite Gauss-Legendre nodes on [a, b].
inline void gl_nodes(double a, double b, int panels, std::vector<double>& x, std::vector<double>& w)
{
    using G = boost::math::quadrature::gauss<double, 20>;
    x.clear();
    w.clear();
    const double h = (b - a) / panels;
    for (int k = 0; k < panels; ++k) {
        const double c = a + (k + 0.5) * h, r = 0.5 * h;
        const auto& ab = G::abscissa();
        const auto& wt = G::weights();
        for (std::size_t i = 0; i < ab.size(); ++i) {
            if (ab[i] == 0.0) {
                x.push_back(c);
                w.push_back(r * wt[i]);
            } else {
                x.push_back(c - r * ab[i]);
                w.push_back(r * wt[i]);
                x.push_back(c + r * ab[i]);
                w.push_back(r * wt[i]);
            }
        }
    }
}

/// Cell-conditional first and second moments of N(mean, cov) by tensor quadrature (p = 2 or 3).
inline tmvn::ConditionalMoments grid_moments(const Rectangle& cell, const Vec& mean, const Mat& cov, int panels)
{
    const int p = cell.dim();
    std::vector<std::vector<double>> xs(p), ws(p);
    for (int j = 0; j < p; ++j) {
        const double sd = std::sqrt(cov(j, j));
        const double a = std::max(cell.lower(j), mean(j) - 9.0 * sd);
        const double b = std::min(cell.upper(j), mean(j) + 9.0 * sd);
        gl_nodes(a, b, panels, xs[j], ws[j]);
    }
    const Mat prec = linalg::spd_inverse(cov);
    double mass = 0.0;
    Vec m1 = Vec::Zero(p);
    Mat m2 = Mat::Zero(p, p);
    std::vector<std::size_t> idx(p, 0);
    Vec z(p);
    while (true) {
        double w = 1.0;
        for (int j = 0; j < p; ++j) {
            z(j) = xs[j][idx[j]];
            w *= ws[j][idx[j]];
        }
        const Vec dz = z - mean;
        w *= std::exp(-0.5 * dz.dot(prec * dz));
        mass += w;
        m1 += w * z;
        m2 += w * z * z.transpose();
        int j = 0;
        while (j < p && ++idx[j] == xs[j].size()) idx[j++] = 0;
        if (j == p) break;
    }
    tmvn::ConditionalMoments out;
    out.m = m1 / mass;
    out.second = m2 / mass;
    out.s2 = out.second.diagonal();
    return out;
}

// ---------------------------------------------------------------------------
// Oracle suite

inline Check trunc_moments_grid(int cases = 1000)
{
    std::mt19937_64 rng(20240611);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    std::string where;
    for (int k = 0; k < cases; ++k) {
        const double mu = -3.0 + 6.0 * u(rng);
        const double sd = 0.3 + 2.7 * u(rng);
        double a = -7.0 + 14.0 * u(rng);
        double b = a + 0.01 + 6.0 * u(rng);
        if (k % 7 == 0) a = -normal::inf;
        if (k % 11 == 0) b = normal::inf;
        const auto t = tmvn::trunc_moments_1d(mu, sd, mu + sd * a, mu + sd * b);
        const auto [e1, e2] = quad_std_moments(a, b);
        const double mean = mu + sd * e1;
        const double second = mu * mu + 2.0 * mu * sd * e1 + sd * sd * e2;
        const double err = std::max(std::abs(t.mean - mean) / std::max(1.0, std::abs(mean)),
                                    std::abs(t.second - second) / std::max(1.0, std::abs(second)));
        if (err > worst) {
            worst = err;
            where = "mu=" + fmt(mu) + " sd=" + fmt(sd) + " a=" + fmt(a) + " b=" + fmt(b);
        }
    }
    return {"trunc_moments_1d vs quadrature", worst <= 1e-8,
            std::to_string(cases) + " cases, max rel err " + fmt(worst) + " (" + where + ")"};
}

inline Check bivariate_orthant()
{
    double worst = 0.0;
    int cases = 0;
    for (double rho : {-0.9, -0.6, -0.3, 0.0, 0.2, 0.5, 0.8, 0.95}) {
        Mat cov(2, 2);
        cov << 1.0, rho, rho, 1.0;
        const Rectangle orthant{Vec::Zero(2), Vec::Constant(2, normal::inf)};
        tmvn::RectProbOptions ro;
        ro.seed = 77 + cases;
        const double closed = 0.25 + std::asin(rho) / (2.0 * M_PI);
        worst = std::max(worst, std::abs(tmvn::rect_prob(Vec::Zero(2), cov, orthant, ro).prob - closed));
        ++cases;
        // shifted finite rectangles against 1-D quadrature
        for (const auto& [l1, u1, l2, u2] : std::vector<std::array<double, 4>>{
                 {-1.0, 0.5, -0.3, 2.0}, {0.7, normal::inf, -normal::inf, -0.2}, {-2.5, -1.0, 1.0, 3.0}}) {
            const Rectangle cell{(Vec(2) << l1, l2).finished(), (Vec(2) << u1, u2).finished()};
            ro.seed = 77 + cases;
            const double q = bvn_rect_quad(rho, l1, u1, l2, u2);
            worst = std::max(worst, std::abs(tmvn::rect_prob(Vec::Zero(2), cov, cell, ro).prob - q));
            ++cases;
        }
    }
    return {"rect_prob vs bivariate closed form", worst <= 1e-3,
            std::to_string(cases) + " cells, max abs err " + fmt(worst)};
}

/// Random correlation matrix with every |off-diagonal| <= bound.
inline Mat bounded_correlation(int p, double bound, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-bound, bound);
    while (true) {
        Mat c = Mat::Identity(p, p);
        for (int i = 0; i < p; ++i) {
            for (int j = i + 1; j < p; ++j) c(i, j) = c(j, i) = u(rng);
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(c, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() > 0.05) return c;
    }
}

/// Mean absolute error of the approximate conditional means against an exact oracle.
inline Check approx_vs_exact(int p, int cases = 30)
{
    std::mt19937_64 rng(9100 + p);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::vector<double> cuts = {-0.8, 0.0, 0.8};
    double abs_m = 0.0, abs_v = 0.0;
    int count = 0;
    for (int k = 0; k < cases; ++k) {
        const Mat cov = bounded_correlation(p, 0.5, rng);
        Vec mean(p);
        Rectangle cell{Vec(p), Vec(p)};
        for (int j = 0; j < p; ++j) {
            mean(j) = -0.7 + 1.4 * u(rng);
            const int code = static_cast<int>(u(rng) * 4.0);
            cell.lower(j) = code == 0 ? -normal::inf : cuts[code - 1];
            cell.upper(j) = code == 3 ? normal::inf : cuts[code];
        }
        const auto ap = tmvn::approx_moments(cell, mean, tmvn::ConditionalStructure::from_covariance(cov));
        tmvn::ConditionalMoments ex;
        if (p <= 3) {
            ex = grid_moments(cell, mean, cov, p == 2 ? 10 : 5);
        } else {
            // rejection when the cell is not too rare, otherwise a long QMC run
            tmvn::RectProbOptions ro;
            ro.tol = 1e-4;
            if (tmvn::rect_prob(mean, cov, cell, ro).prob >= 5e-3) {
                ex = tmvn::rejection_moments(cell, mean, cov, 2'000'000, derive_seed(31, k));
            } else {
                tmvn::QmcOptions qo;
                qo.points = 1 << 18;
                qo.seed = derive_seed(37, k);
                ex = tmvn::qmc_moments(cell, mean, cov, qo);
            }
        }
        for (int j = 0; j < p; ++j) {
            abs_m += std::abs(ap.m(j) - ex.m(j));
            abs_v += std::abs((ap.s2(j) - ap.m(j) * ap.m(j)) - (ex.s2(j) - ex.m(j) * ex.m(j)));
            ++count;
        }
    }
    const double mae = abs_m / count;
    return {"approx vs exact conditional means, p=" + std::to_string(p), mae <= 0.05,
            std::to_string(cases) + " cells, MAE mean " + fmt(mae) + ", MAE variance " + fmt(abs_v / count)};
}

inline std::vector<Check> oracle_suite()
{
    return {trunc_moments_grid(), bivariate_orthant(), approx_vs_exact(2), approx_vs_exact(3), approx_vs_exact(5)};
}

// ---------------------------------------------------------------------------
// Property suite

inline sim::SimData small_sample(std::uint64_t seed, int n = 100, int p = 5)
{
    sim::SimDesign ds = sim::validation_design(n);
    ds.p = p;
    ds.seed = seed;
    return sim::generate(ds);
}

/// q_trace of every fit is non-decreasing within the relative slack.
inline Check q_trace_monotone(Backend backend, int fits)
{
    const double slack = backend == Backend::exact ? 1e-8 : 1e-3;
    int bad_fits = 0, steps = 0, bad_steps = 0;
    double worst = 0.0;
    for (int f = 0; f < fits; ++f) {
        const auto sd = small_sample(derive_seed(4242, f), 80, backend == Backend::exact ? 3 : 5);
        FitOptions fo;
        fo.backend = backend;
        fo.seed = f;
        fo.exact.qmc.points = 1 << 10;
        fo.max_iter = backend == Backend::exact ? 30 : 200;
        const FittedModel m = fit(sd.data, BasisSpec::polynomial(2), 2, fo);
        bool bad = false;
        for (std::size_t k = 1; k < m.q_trace.size(); ++k) {
            ++steps;
            const double drop = (m.q_trace[k - 1] - m.q_trace[k]) / std::abs(m.q_trace[k - 1]);
            worst = std::max(worst, drop);
            if (drop > slack) {
                ++bad_steps;
                bad = true;
            }
        }
        bad_fits += bad;
    }
    return {std::string("q_trace non-decreasing (") + to_string(backend) + ")", bad_fits == 0,
            std::to_string(bad_steps) + "/" + std::to_string(steps) + " steps decrease beyond " + fmt(slack) +
                " in " + std::to_string(bad_fits) + "/" + std::to_string(fits) + " fits, worst relative drop " +
                fmt(worst)};
}

/**
 * Generalized-EM ascent: on the summary of each iteration, the M-step value is
 * no smaller than Q at the parameters that produced the summary.
 */
inline Check m_step_ascent(int fits)
{
    int steps = 0, bad = 0;
    double worst = 0.0;
    for (int f = 0; f < fits; ++f) {
        const auto sd = small_sample(derive_seed(5151, f));
        FitOptions fo;
        fo.seed = f;
        const BasisMatrix bm = build_basis(sd.data.y, BasisSpec::polynomial(2));
        const IMat x = sd.data.x;
        fo.observer = [&](int, const ThresholdSet& th, const ModelParams& params) {
            EStepOptions eo;
            const EStepSummary s = e_step(x, params, th, bm.F, eo);
            const double before = q_value(s, params);
            const double after = q_value(s, m_step_unscaled(s, mle_alpha(s, params.d())));
            const double drop = (before - after) / std::abs(before);
            worst = std::max(worst, drop);
            ++steps;
            if (drop > 1e-10) ++bad;
        };
        fit(sd.data, BasisSpec::polynomial(2), 2, fo);
    }
    return {"M-step does not decrease Q on a fixed summary", bad == 0,
            std::to_string(bad) + "/" + std::to_string(steps) + " violations, worst relative drop " + fmt(worst)};
}

inline Check threshold_monotone(int fits = 20)
{
    int iterations = 0, bad = 0;
    for (int f = 0; f < fits; ++f) {
        sim::SimDesign ds = sim::comparison_design(150);
        ds.p = 6;
        ds.g = sim::cycling_levels(6);
        ds.seed = derive_seed(777, f);
        const auto sd = sim::generate(ds);
        FitOptions fo;
        fo.seed = f;
        fo.observer = [&](int, const ThresholdSet& th, const ModelParams&) {
            ++iterations;
            try {
                th.validate();
            } catch (const Error&) {
                ++bad;
            }
        };
        const FittedModel m = fit(sd.data, BasisSpec::polynomial(2), 1 + f % 2, fo);
        try {
            m.thresholds.validate();
        } catch (const Error&) {
            ++bad;
        }
    }
    return {"thresholds strictly increasing at every iteration", bad == 0,
            std::to_string(fits) + " fits, " + std::to_string(iterations) + " iterations, " + std::to_string(bad) +
                " violations"};
}

inline bool same_model(const FittedModel& a, const FittedModel& b)
{
    if (a.q_trace != b.q_trace || a.iterations != b.iterations) return false;
    if (a.params.delta != b.params.delta || a.params.alpha != b.params.alpha || a.params.xi != b.params.xi) return false;
    for (int j = 0; j < a.p(); ++j) {
        if (a.thresholds.cuts[j] != b.thresholds.cuts[j]) return false;
    }
    return true;
}

/// Writes codes through a monotone relabeling, re-reads them and refits.
inline Check recode_invariance()
{
    const auto sd = small_sample(31337, 120, 4);
    FitOptions fo;
    fo.seed = 3;
    const FittedModel base = fit(sd.data, BasisSpec::polynomial(2), 2, fo);
    int bad = 0;
    const std::vector<std::function<long(int)>> maps = {
        [](int c) { return c + 10L; }, [](int c) { return 3L * c - 7; }, [](int c) { return -20L + c * c; }};
    for (const auto& f : maps) {
        Table t;
        for (int j = 0; j < sd.data.p(); ++j) t.header.push_back(sd.data.column_name(j));
        t.header.push_back("y");
        for (int i = 0; i < sd.data.n(); ++i) {
            std::vector<std::string> row;
            for (int j = 0; j < sd.data.p(); ++j) row.push_back(std::to_string(f(sd.data.x(i, j))));
            row.push_back(csv::format_double(sd.data.y(i)));
            t.rows.push_back(row);
        }
        const OrdinalDataset re = validate_dataset(t);
        if (!same_model(base, fit(re, BasisSpec::polynomial(2), 2, fo))) ++bad;
    }
    return {"monotone recode gives a bit-identical fit", bad == 0, std::to_string(bad) + "/3 recodes differ"};
}

inline Check weights_sum_to_one()
{
    const auto sd = small_sample(8080, 100, 5);
    FitOptions fo;
    const FittedModel m = fit(sd.data, BasisSpec::polynomial(2), 2, fo);
    ReduceOptions ro;
    ro.points = 256;
    Reducer red(m, ro);
    double worst = 0.0;
    std::mt19937_64 rng(1);
    for (int k = 0; k < 200; ++k) {
        Eigen::VectorXi x(5);
        for (int j = 0; j < 5; ++j) x(j) = 1 + static_cast<int>(rng() % 4);
        const Vec w = red.posterior_weights(x);
        if ((w.array() < 0.0).any()) worst = 1.0;
        worst = std::max(worst, std::abs(w.sum() - 1.0));
    }
    return {"posterior weights sum to 1", worst <= 1e-10, "200 code vectors, max |sum - 1| " + fmt(worst)};
}

inline Check type_invariants(int fits = 10)
{
    int checked = 0, bad = 0;
    std::string first;
    auto verify = [&](const ModelParams& p) {
        ++checked;
        try {
            p.validate(1e-8);
        } catch (const Error& e) {
            if (first.empty()) first = e.what();
            ++bad;
        }
    };
    for (int f = 0; f < fits; ++f) {
        const auto sd = small_sample(derive_seed(99, f), 100, 5);
        FitOptions fo;
        fo.seed = f;
        fo.observer = [&](int k, const ThresholdSet&, const ModelParams& p) {
            if (k > 1) verify(p);
        };
        const FittedModel m = fit(sd.data, BasisSpec::polynomial(2), f % 3, fo);
        verify(m.params);
        try {
            m.validate();
        } catch (const Error& e) {
            if (first.empty()) first = e.what();
            ++bad;
        }
    }
    return {"alpha/Delta/xi invariants after every update", bad == 0,
            std::to_string(checked) + " parameter sets, " + std::to_string(bad) + " violations" +
                (first.empty() ? "" : " (" + first + ")")};
}

inline Check thread_determinism()
{
    const auto sd = small_sample(2468, 150, 5);
    int bad = 0;
    for (Backend b : {Backend::approximate, Backend::exact}) {
        FitOptions fo;
        fo.backend = b;
        fo.seed = 11;
        fo.max_iter = b == Backend::exact ? 5 : 200;
        fo.exact.qmc.points = 1 << 9;
        fo.threads = 1;
        const FittedModel one = fit(sd.data, BasisSpec::polynomial(2), 2, fo);
        for (int t : {2, 4}) {
            fo.threads = t;
            if (!same_model(one, fit(sd.data, BasisSpec::polynomial(2), 2, fo))) ++bad;
        }
        ReduceOptions ro;
        ro.points = 256;
        ro.threads = 1;
        const Mat r1 = reduce_dataset(sd.data.x, one, ro).r;
        ro.threads = 3;
        if (r1 != reduce_dataset(sd.data.x, one, ro).r) ++bad;
    }
    return {"bit-identical results for 1, 2, 3 and 4 threads", bad == 0, std::to_string(bad) + " mismatches"};
}

inline Check full_model_statistic()
{
    double worst = 0.0;
    for (int f = 0; f < 5; ++f) {
        const auto sd = small_sample(derive_seed(1357, f), 100, 5);
        FitOptions fo;
        fo.seed = f;
        DimensionFits fits(sd.data, BasisSpec::polynomial(2), fo);
        const int dm = fits.d_max();
        const double scale = std::abs(q_partial(fits.summary(dm), fits.at(dm).params.alpha));
        worst = std::max(worst, std::abs(fits.statistic(dm)) / scale);
    }
    return {"lack-of-fit statistic at d_max is 0", worst <= 1e-8, "max |statistic| / |Q| " + fmt(worst)};
}

/// Rejection rate of the permutation test of d = 0 when y is independent of X.
inline Check permutation_null(int seeds = 200, double level = 0.05, int B = 100)
{
    int rejected = 0, used = 0;
    for (int s = 0; s < seeds; ++s) {
        sim::SimDesign ds = sim::validation_design(60);
        ds.p = 3;
        ds.d = 0;
        ds.seed = derive_seed(60606, s);
        const auto sd = sim::generate(ds);
        FitOptions fo;
        fo.seed = s;
        PermutationOptions po;
        po.B = B;
        po.level = level;
        po.reduce.points = 128;
        po.reduce.shifts = 4;
        try {
            const DimensionDecision dd = permutation_select(sd.data, BasisSpec::polynomial(2), fo, po);
            rejected += dd.d_hat > 0;
            ++used;
        } catch (const Error&) {
        }
    }
    const double rate = used > 0 ? static_cast<double>(rejected) / used : 1.0;
    const double se = std::sqrt(level * (1.0 - level) / std::max(used, 1));
    return {"permutation null rejection rate", used == seeds && std::abs(rate - level) <= 2.0 * se,
            "rate " + fmt(rate) + " over " + std::to_string(used) + " null samples, target " + fmt(level) +
                " +/- " + fmt(2.0 * se)};
}

inline std::vector<Check> property_suite()
{
    return {q_trace_monotone(Backend::exact, 3),
            q_trace_monotone(Backend::approximate, 20),
            m_step_ascent(5),
            threshold_monotone(20),
            recode_invariance(),
            weights_sum_to_one(),
            type_invariants(),
            thread_determinism(),
            full_model_statistic(),
            permutation_null()};
}

} // namespace checks
} // namespace ordred
