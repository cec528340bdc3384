#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtcal/panel.hpp"
#include "support.hpp"

using namespace mtcal;
using mtcal::test::Gen;

namespace {

const std::vector<double> kTwelve{0.012, -0.034, 0.051, 0.007, -0.015, 0.022,
                                  0.041, -0.008, 0.019, 0.003, -0.027, 0.036};

std::vector<std::uint8_t> ones(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

// 30 x 4 design built from closed-form trig values so the oracle can be reproduced anywhere.
FactorPanel trig_factors()
{
    std::vector<double> v;
    for (int r = 0; r < 30; ++r)
        for (int k = 0; k < 4; ++k)
            v.push_back(std::sin(0.7 * (r + 1) * (k + 1) + 0.3 * k) * 0.05);
    return FactorPanel(test::labels(30), test::names(4, "F"), v);
}

std::vector<double> trig_returns(const FactorPanel& f)
{
    std::vector<double> y(30);
    for (int r = 0; r < 30; ++r)
        y[r] = 0.002 + 0.4 * f.at(r, 0) - 0.2 * f.at(r, 1) + 0.1 * f.at(r, 2) + 0.3 * f.at(r, 3) +
               0.01 * std::cos(1.3 * r + 0.5);
    return y;
}

} // namespace

TEST(ReturnPanel, RejectsInvalidShapes)
{
    const auto l = test::labels(3);
    EXPECT_THROW(ReturnPanel({"1"}, {"a"}, {0.0}, {1}), Error);
    EXPECT_THROW(ReturnPanel(l, {}, {}, {}), Error);
    try {
        ReturnPanel(l, {"a", "a"}, std::vector<double>(6), ones(6));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DuplicateIdentifier);
    }
    EXPECT_THROW(ReturnPanel({"2", "1", "3"}, {"a"}, std::vector<double>(3), ones(3)), Error);
    EXPECT_THROW(ReturnPanel(l, {"a"}, {0.0, NAN, 0.0}, ones(3)), Error);
    try {
        ReturnPanel(l, {"a"}, std::vector<double>(2), ones(2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::LengthMismatch);
    }
}

TEST(ReturnPanel, MaskedCellsAreCanonicalized)
{
    const ReturnPanel p(test::labels(3), {"a"}, {1.0, 99.0, 3.0}, {1, 0, 1});
    EXPECT_EQ(p.at(1, 0), 0.0);
    EXPECT_EQ(p.observed_count(0), 2u);
    EXPECT_FALSE(p.column_complete(0));
    // a NaN under the mask is fine
    EXPECT_NO_THROW(ReturnPanel(test::labels(3), {"a"}, {1.0, NAN, 3.0}, {1, 0, 1}));
}

TEST(ReturnPanel, NumericLabelsCompareNumerically)
{
    EXPECT_NO_THROW(ReturnPanel({"9", "10", "11"}, {"a"}, {1, 2, 3}, ones(3)));
    EXPECT_NO_THROW(ReturnPanel({"2001-01", "2001-02"}, {"a"}, {1, 2}, ones(2)));
}

TEST(FactorPanel, Validation)
{
    EXPECT_THROW(FactorPanel(test::labels(2), {}, {}), Error);
    EXPECT_THROW(FactorPanel(test::labels(2), test::names(17, "F"), std::vector<double>(34)), Error);
    EXPECT_THROW(FactorPanel(test::labels(2), {"F"}, {0.0, NAN}), Error);
    const FactorPanel f(test::labels(2), {"F"}, {0.1, 0.2});
    const ReturnPanel p({"0001", "0003"}, {"a"}, {1, 2}, ones(2));
    EXPECT_THROW(f.require_aligned(p), Error);
}

TEST(TStatMean, SymmetricSeriesHasZeroT)
{
    const std::vector<double> x{1, -1, 1, -1};
    const auto s = t_stat_mean(x, ones(4), 2);
    EXPECT_EQ(s.mean, 0.0);
    EXPECT_EQ(s.t_stat, 0.0);
    EXPECT_EQ(s.n_obs, 4u);
}

TEST(TStatMean, ConstantSeriesIsDegenerate)
{
    const std::vector<double> x(10, 0.03);
    try {
        (void)t_stat_mean(x, ones(10));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateVariance);
    }
}

TEST(TStatMean, TooFewObservations)
{
    const std::vector<double> x{0.1, 0.2, 0.3};
    try {
        (void)t_stat_mean(x, ones(3), 8);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooFewObservations);
    }
}

TEST(TStatMean, TwelveValueSeriesMatchesHandComputation)
{
    // mean / (s / sqrt(12)) with the n-1 standard deviation, computed independently
    const auto s = t_stat_mean(kTwelve, ones(12));
    EXPECT_NEAR(s.mean, 0.0089166666666666648, 1e-15);
    EXPECT_NEAR(s.t_stat, 1.1566323365688083, 1e-12);
}

TEST(TStatMean, MaskedEntriesAreIgnored)
{
    std::vector<double> x = kTwelve;
    std::vector<std::uint8_t> m = ones(12);
    x.push_back(1e6);
    m.push_back(0);
    const auto s = t_stat_mean(x, m);
    EXPECT_NEAR(s.t_stat, 1.1566323365688083, 1e-12);
    EXPECT_EQ(s.n_obs, 12u);
}

TEST(AlphaRegression, ExactFitHasZeroAlpha)
{
    Gen g(1);
    const auto f = g.factors(20, 2);
    std::vector<double> y(20);
    for (std::size_t r = 0; r < 20; ++r)
        y[r] = 0.5 * f.at(r, 0);
    const auto s = alpha_regression(y, ones(20), f);
    ASSERT_TRUE(s.alpha);
    EXPECT_NEAR(*s.alpha, 0.0, 1e-12);
}

TEST(AlphaRegression, ZeroFactorsReduceToMean)
{
    const FactorPanel zero(test::labels(12), {"F1", "F2"}, std::vector<double>(24, 0.0));
    const auto s = alpha_regression(kTwelve, ones(12), zero);
    const auto m = t_stat_mean(kTwelve, ones(12));
    EXPECT_NEAR(*s.alpha, m.mean, 1e-15);
    EXPECT_NEAR(*s.t_alpha, m.t_stat, 1e-10 * std::abs(m.t_stat));
}

TEST(AlphaRegression, MatchesNormalEquationsOracle)
{
    // coefficients from an explicit (X'X)^-1 X'y solve
    const auto f = trig_factors();
    const auto y = trig_returns(f);
    const auto s = alpha_regression(y, ones(30), f);
    EXPECT_NEAR(*s.alpha, 0.0022945265646658218, 1e-13);
    EXPECT_NEAR(*s.t_alpha, 1.6766064064419288, 1e-9);
    const double b[4] = {0.39968591145089849, -0.14032046592296626, 0.095830997783935709, 0.29744612058270359};
    ASSERT_TRUE(s.residuals);
    for (std::size_t r = 0; r < 30; ++r) {
        double e = y[r] - 0.0022945265646658218;
        for (int k = 0; k < 4; ++k)
            e -= b[k] * f.at(r, k);
        EXPECT_NEAR((*s.residuals)[r], e, 1e-12);
    }
}

TEST(AlphaRegression, UsesJointlyObservedPeriodsOnly)
{
    const auto f = trig_factors();
    auto y = trig_returns(f);
    auto m = ones(30);
    for (int r : {2, 7, 11, 19, 25}) {
        m[r] = 0;
        y[r] = 123.0;
    }
    const auto s = alpha_regression(y, m, f);
    EXPECT_NEAR(*s.alpha, 0.0028458169766394622, 1e-13);
    EXPECT_NEAR(*s.t_alpha, 1.8158642210938489, 1e-9);
    EXPECT_TRUE(std::isnan((*s.residuals)[2]));
    EXPECT_EQ(s.n_obs, 25u);
}

TEST(AlphaRegression, CollinearFactorsAreRankDeficient)
{
    Gen g(2);
    const auto base = g.factors(20, 1);
    std::vector<double> v;
    for (std::size_t r = 0; r < 20; ++r) {
        v.push_back(base.at(r, 0));
        v.push_back(2.0 * base.at(r, 0));
    }
    const FactorPanel f(test::labels(20), {"A", "B"}, v);
    std::vector<double> y(20);
    for (auto& x : y)
        x = g.normal();
    try {
        (void)alpha_regression(y, ones(20), f);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::RankDeficient);
    }
}

TEST(AlphaRegression, TooFewJointObservations)
{
    Gen g(3);
    const auto f = g.factors(10, 4);
    std::vector<double> y(10, 0.0);
    auto m = ones(10);
    for (int r = 0; r < 5; ++r)
        m[r] = 0;
    try {
        (void)alpha_regression(y, m, f, 5);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooFewObservations);  // 5 points, 5 regressors
    }
    try {
        (void)alpha_regression(y, m, f, 8);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooFewObservations);
    }
}

TEST(PanelStats, ShortColumnIsFlaggedNotDropped)
{
    Gen g(4);
    std::vector<std::vector<double>> cols(3, std::vector<double>(20));
    for (auto& c : cols)
        for (auto& x : c)
            x = g.normal();
    for (std::size_t r = 2; r < 20; ++r)
        cols[1][r] = std::nan("");
    const auto p = test::panel_from_columns(cols);
    const auto stats = panel_stats(p, nullptr, 8);
    ASSERT_EQ(stats.size(), 3u);
    EXPECT_FALSE(stats[0].excluded());
    ASSERT_TRUE(stats[1].excluded());
    EXPECT_EQ(*stats[1].excluded_reason, ErrorKind::TooFewObservations);
    EXPECT_FALSE(stats[2].excluded());
}

TEST(PanelStats, NoFactorsMeansNoAlpha)
{
    Gen g(5);
    for (const auto& s : panel_stats(g.panel(30, 5)))
        EXPECT_FALSE(s.stat->alpha.has_value());
}

TEST(PanelStats, CountAboveTwoMatchesColumnwiseRecomputation)
{
    Gen g(6);
    std::vector<double> means(484);
    for (auto& m : means)
        m = g.uniform(-0.01, 0.02);
    const auto p = g.panel(120, 484, 0.05, means, 0.05);
    std::size_t lib = 0;
    for (const auto& s : panel_stats(p))
        lib += s.stat && s.stat->t_stat > 2.0 ? 1 : 0;
    std::size_t oracle = 0;
    for (std::size_t c = 0; c < p.strategies(); ++c) {
        double sum = 0.0;
        double n = 0.0;
        for (std::size_t r = 0; r < p.periods(); ++r)
            if (p.observed(r, c)) {
                sum += p.at(r, c);
                n += 1.0;
            }
        const double mean = sum / n;
        double ss = 0.0;
        for (std::size_t r = 0; r < p.periods(); ++r)
            if (p.observed(r, c))
                ss += (p.at(r, c) - mean) * (p.at(r, c) - mean);
        oracle += mean / std::sqrt(ss / (n - 1.0) / n) > 2.0 ? 1 : 0;
    }
    EXPECT_EQ(lib, oracle);
    EXPECT_GT(lib, 0u);
}

TEST(PanelProperties, TStatIsScaleInvariant)
{
    Gen g(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 8 + g.index(40);
        std::vector<double> x(n);
        for (auto& v : x)
            v = 0.01 + g.normal();
        const double c = std::exp(g.uniform(-5.0, 5.0));
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i)
            y[i] = c * x[i];
        const double t1 = t_stat_mean(x, ones(n)).t_stat;
        const double t2 = t_stat_mean(y, ones(n)).t_stat;
        EXPECT_NEAR(t1, t2, 1e-10 * std::max(1.0, std::abs(t1)));
    }
}

TEST(PanelProperties, InterceptOnlyRegressionAgreesWithMean)
{
    Gen g(8);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 10 + g.index(50);
        const FactorPanel zero(test::labels(d), {"F"}, std::vector<double>(d, 0.0));
        std::vector<double> y(d);
        for (auto& v : y)
            v = g.uniform(-1.0, 1.5);
        const auto a = alpha_regression(y, ones(d), zero);
        const auto m = t_stat_mean(y, ones(d));
        EXPECT_NEAR(*a.alpha, m.mean, 1e-10 * std::max(1e-3, std::abs(m.mean)));
        EXPECT_NEAR(*a.t_alpha, m.t_stat, 1e-10 * std::max(1.0, std::abs(m.t_stat)));
    }
}

TEST(PanelProperties, PermutingColumnsPermutesStats)
{
    Gen g(9);
    const auto f = g.factors(40, 3);
    const auto p = g.panel(40, 12, 0.05, {}, 0.1);
    std::vector<std::size_t> perm(12);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), g.eng);
    const auto q = p.select_columns(perm);
    const auto a = panel_stats(p, &f);
    const auto b = panel_stats(q, &f);
    for (std::size_t c = 0; c < 12; ++c) {
        EXPECT_EQ(a[perm[c]].stat->alpha, b[c].stat->alpha);
        EXPECT_EQ(a[perm[c]].stat->t_alpha, b[c].stat->t_alpha);
    }
}

TEST(WeightedEstimation, MultiplicitiesMatchMaterializedPanel)
{
    Gen g(10);
    const auto f = g.factors(50, 3);
    const auto p = g.panel(50, 6, 0.05, {}, 0.1);
    std::vector<std::uint32_t> w(50, 0);
    std::vector<std::size_t> rows;
    for (int r = 0; r < 50; ++r) {
        const std::size_t k = g.index(50);
        ++w[k];
        rows.push_back(k);
    }
    for (const auto mode : {EffectMode::raw_mean, EffectMode::factor_alpha}) {
        const auto est = EffectEstimator(p, &f, mode).estimate(w);
        for (std::size_t c = 0; c < 6; ++c) {
            std::vector<double> y;
            std::vector<std::uint8_t> m;
            std::vector<double> fv;
            for (std::size_t r : rows) {
                y.push_back(p.at(r, c));
                m.push_back(p.observed(r, c));
                for (int k = 0; k < 3; ++k)
                    fv.push_back(f.at(r, k));
            }
            const FactorPanel gf(test::labels(50), f.names(), fv);
            if (!est[c].ok())
                continue;
            const double t = mode == EffectMode::raw_mean ? t_stat_mean(y, m).t_stat : *alpha_regression(y, m, gf).t_alpha;
            EXPECT_NEAR(est[c].t(), t, 1e-9 * std::max(1.0, std::abs(t)));
        }
    }
}

TEST(ScreenColumns, ReportsDroppedColumnsWithStatus)
{
    std::vector<std::vector<double>> cols(3, std::vector<double>(12, 0.0));
    for (std::size_t r = 0; r < 12; ++r) {
        cols[0][r] = r % 2 ? 0.01 : -0.02;
        cols[1][r] = 0.05;
        cols[2][r] = r < 3 ? 0.01 * r : std::nan("");
    }
    const auto s = screen_columns(test::panel_from_columns(cols), nullptr, EffectMode::raw_mean, 8);
    ASSERT_EQ(s.kept, std::vector<std::size_t>{0});
    ASSERT_EQ(s.dropped.size(), 2u);
    EXPECT_EQ(s.dropped[0].second, EstimateStatus::degenerate_variance);
    EXPECT_EQ(s.dropped[1].second, EstimateStatus::too_few_observations);
}
