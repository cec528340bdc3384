#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtcal/inject.hpp"
#include "mtcal/resample.hpp"
#include "support.hpp"

using namespace mtcal;
using mtcal::test::Gen;

namespace {

double column_mean(const ReturnPanel& p, std::size_t c)
{
    double s = 0.0, n = 0.0;
    for (std::size_t r = 0; r < p.periods(); ++r)
        if (p.observed(r, c)) {
            s += p.at(r, c);
            n += 1.0;
        }
    return s / n;
}

double column_var(const ReturnPanel& p, std::size_t c)
{
    const double m = column_mean(p, c);
    double ss = 0.0, n = 0.0;
    for (std::size_t r = 0; r < p.periods(); ++r)
        if (p.observed(r, c)) {
            ss += (p.at(r, c) - m) * (p.at(r, c) - m);
            n += 1.0;
        }
    return ss / (n - 1.0);
}

std::vector<double> spread_means(std::size_t n, double lo, double hi)
{
    std::vector<double> m(n);
    for (std::size_t c = 0; c < n; ++c)
        m[c] = lo + (hi - lo) * static_cast<double>(c) / static_cast<double>(n - 1);
    return m;
}

} // namespace

TEST(TrueCount, RoundsHalfUp)
{
    EXPECT_EQ(true_count(0.0, 100), 0u);
    EXPECT_EQ(true_count(0.05, 10), 1u);   // 0.5 rounds up
    EXPECT_EQ(true_count(0.02, 484), 10u); // 9.68
    EXPECT_EQ(true_count(0.1, 200), 20u);
    EXPECT_EQ(true_count(0.15, 10), 2u);  // 1.5
    EXPECT_EQ(true_count(0.14, 10), 1u);
}

TEST(InjectionConfig, RejectsP0OutsideRange)
{
    EXPECT_THROW((InjectionConfig{1.0}.validate()), Error);
    EXPECT_THROW((InjectionConfig{-0.1}.validate()), Error);
}

TEST(BuildNullPanel, DemeanedColumnHasZeroMean)
{
    Gen g(1);
    const auto p = g.panel(50, 3, 0.05, {0.02, -0.01, 0.0}, 0.1);
    const auto y = build_null_panel(p, EffectMode::raw_mean);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(column_mean(y.panel, c), 0.0, 1e-15);
        EXPECT_FALSE(y.truth[c]);
    }
}

TEST(BuildNullPanel, ReestimatedAlphaIsZero)
{
    Gen g(2);
    const auto f = g.factors(60, 3);
    const auto p = g.panel(60, 5, 0.05, {0.01, 0.02, -0.01, 0.0, 0.03}, 0.1);
    const auto y = build_null_panel(p, EffectMode::factor_alpha, &f);
    const auto stats = panel_stats(y.panel, &f);
    for (const auto& s : stats)
        EXPECT_NEAR(*s.stat->alpha, 0.0, 1e-10);
}

TEST(BuildNullPanel, BootstrappedNullTStatsCentreOnZero)
{
    Gen g(3);
    const auto p = g.panel(120, 40, 0.05, spread_means(40, -0.01, 0.02));
    const auto y = build_null_panel(p, EffectMode::raw_mean);
    const EffectEstimator est(y.panel, nullptr, EffectMode::raw_mean);
    double sum = 0.0, sum2 = 0.0;
    const int B = 1000;
    for (int b = 0; b < B; ++b) {
        const auto e = est.estimate(multiplicities(draw_indices(derive_seed(9, Stage::inner, b), 120), 120));
        double m = 0.0;
        for (const auto& x : e)
            m += x.t();
        m /= 40.0;
        sum += m;
        sum2 += m * m;
    }
    const double mean = sum / B;
    const double se = std::sqrt((sum2 / B - mean * mean) / B);
    EXPECT_LT(std::abs(mean), 4.0 * se);
}

TEST(BuildNullPanel, FlagsAndDropsUnestimableColumns)
{
    Gen g(4);
    std::vector<std::vector<double>> cols(3, std::vector<double>(20));
    for (auto& c : cols)
        for (auto& x : c)
            x = 0.05 * g.normal();
    cols[1].assign(20, 0.01);
    const auto y = build_null_panel(test::panel_from_columns(cols), EffectMode::raw_mean);
    EXPECT_EQ(y.panel.strategies(), 2u);
    EXPECT_EQ(y.source_columns, (std::vector<std::size_t>{0, 2}));
    ASSERT_EQ(y.dropped.size(), 1u);
    EXPECT_EQ(y.dropped[0].first, 1u);
    EXPECT_EQ(y.dropped[0].second, EstimateStatus::degenerate_variance);
}

TEST(BuildNullPanel, AllColumnsFiltered)
{
    const auto p = test::panel_from_columns({{0.1, 0.1, 0.1}});
    try {
        (void)build_null_panel(p, EffectMode::raw_mean, nullptr, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::AllFundsFiltered);
    }
}

TEST(BuildAlternativePanel, ZeroP0EqualsNullPanel)
{
    Gen g(5);
    const auto p = g.panel(40, 6, 0.05, spread_means(6, 0.0, 0.02));
    const auto a = build_alternative_panel(p, {0.0}, draw_indices(3, 40));
    const auto n = build_null_panel(p, EffectMode::raw_mean);
    EXPECT_EQ(a.panel, n.panel);
    EXPECT_EQ(a.truth, n.truth);
    EXPECT_EQ(a.injected_effect, n.injected_effect);
}

TEST(BuildAlternativePanel, IdentityDrawKeepsTopInSampleColumns)
{
    Gen g(6);
    const auto p = g.panel(60, 10, 0.05, spread_means(10, -0.01, 0.03));
    const auto stats = panel_stats(p);
    std::vector<std::size_t> order(10);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return stats[a].stat->t_stat > stats[b].stat->t_stat; });
    const auto y = build_alternative_panel(p, {0.2}, IndexDraw::identity(60));
    EXPECT_EQ(y.true_total(), 2u);
    for (std::size_t k = 0; k < 10; ++k) {
        const std::size_t c = order[k];
        EXPECT_EQ(y.truth[c], k < 2 ? 1 : 0);
        if (k < 2) {
            EXPECT_NEAR(y.injected_effect[c], stats[c].stat->mean, 1e-15);
            EXPECT_NEAR(column_mean(y.panel, c), stats[c].stat->mean, 1e-12);
        }
    }
}

TEST(BuildAlternativePanel, TargetsMatchGatherRecomputation)
{
    Gen g(7);
    const auto p = g.panel(80, 20, 0.05, spread_means(20, -0.005, 0.02), 0.05);
    const auto draw = draw_indices(123, 80);
    const auto y = build_alternative_panel(p, {0.25}, draw);
    const auto xi = apply_draw(p, draw);
    for (std::size_t c = 0; c < 20; ++c) {
        if (y.truth[c]) {
            EXPECT_NEAR(column_mean(y.panel, c), column_mean(xi, c), 1e-10);
            EXPECT_NEAR(y.injected_effect[c], column_mean(xi, c), 1e-10);
        } else {
            EXPECT_NEAR(column_mean(y.panel, c), 0.0, 1e-10);
            EXPECT_EQ(y.injected_effect[c], 0.0);
        }
    }
}

TEST(BuildAlternativePanel, FactorModeInjectsIntercepts)
{
    Gen g(8);
    const auto f = g.factors(90, 3);
    const auto p = g.panel(90, 15, 0.04, spread_means(15, 0.0, 0.02));
    const auto draw = draw_indices(55, 90);
    const InjectionConfig cfg{0.2, EffectMode::factor_alpha};
    const auto y = build_alternative_panel(p, cfg, draw, &f);
    const auto fd = apply_draw(f, draw);
    const auto boot = panel_stats(apply_draw(p, draw), &fd);
    const auto after = panel_stats(y.panel, &f);
    for (std::size_t c = 0; c < 15; ++c) {
        if (y.truth[c])
            EXPECT_NEAR(*after[c].stat->alpha, *boot[c].stat->alpha, 1e-10);
        else
            EXPECT_NEAR(*after[c].stat->alpha, 0.0, 1e-10);
    }
}

TEST(BuildAlternativePanel, PositivityViolation)
{
    Gen g(9);
    const auto p = g.panel(40, 10, 0.05, std::vector<double>(10, -0.05));
    try {
        (void)build_alternative_panel(p, {0.5}, IndexDraw::identity(40));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::PositivityViolation);
    }
    // two-sided selection has no positivity constraint
    EXPECT_NO_THROW((void)build_alternative_panel(p, {0.5, EffectMode::raw_mean, Sidedness::two_sided},
                                                  IndexDraw::identity(40)));
}

TEST(PlanInjection, TiesGoToLowerIndex)
{
    std::vector<EffectEstimate> est(4, EffectEstimate{0.01, 0.005, 30, EstimateStatus::ok});
    const auto plan = plan_injection(est, est, {0.5});
    EXPECT_EQ(plan.selected, (std::vector<std::size_t>{0, 1}));
}

TEST(PlanInjection, UndefinedBootstrapEstimatesAreIneligible)
{
    std::vector<EffectEstimate> base(3, EffectEstimate{0.01, 0.005, 30, EstimateStatus::ok});
    auto boot = base;
    boot[0] = EffectEstimate{0.5, 0.0, 30, EstimateStatus::degenerate_variance};
    EXPECT_EQ(plan_injection(base, boot, {0.34}).selected, std::vector<std::size_t>{1});
    boot[1].status = boot[2].status = EstimateStatus::too_few_observations;
    try {
        (void)plan_injection(base, boot, {0.34});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooFewObservations);
    }
}

TEST(SelectionStats, SingletonAndEmpty)
{
    Gen g(10);
    const auto p = g.panel(30, 4, 0.05, {0.0, 0.0, 0.0, 0.0});
    auto y = build_null_panel(p, EffectMode::raw_mean);
    try {
        (void)selection_stats(y, EffectMode::raw_mean);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoTrueStrategies);
    }
    y.truth[2] = 1;
    y.injected_effect[2] = 0.05;
    EXPECT_EQ(selection_stats(y, EffectMode::raw_mean).avg_effect, 0.05);
}

TEST(InjectProperties, RandomPanelsSatisfyInvariants)
{
    Gen g(11);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t d = 20 + g.index(60);
        const std::size_t n = 5 + g.index(30);
        std::vector<double> means(n);
        for (auto& m : means)
            m = g.uniform(0.005, 0.03);
        const auto p = g.panel(d, n, 0.05, means, 0.1);
        const double p0 = g.uniform(0.0, 0.5);
        const auto draw = draw_indices(g.eng(), d);
        TruthLabeledPanel y;
        try {
            y = build_alternative_panel(p, {p0}, draw);
        } catch (const Error& e) {
            EXPECT_TRUE(e.kind() == ErrorKind::PositivityViolation || e.kind() == ErrorKind::TooFewObservations);
            continue;
        }
        EXPECT_EQ(y.true_total(), true_count(p0, y.panel.strategies()));
        for (std::size_t c = 0; c < y.panel.strategies(); ++c) {
            const std::size_t src = y.source_columns[c];
            EXPECT_EQ(y.injected_effect[c] != 0.0, y.truth[c] != 0);
            EXPECT_NEAR(column_mean(y.panel, c), y.injected_effect[c], 1e-10);
            EXPECT_NEAR(column_var(y.panel, c), column_var(p, src), 1e-12);
            for (std::size_t r = 0; r < d; ++r) {
                EXPECT_EQ(y.panel.observed(r, c), p.observed(r, src));
                if (!y.panel.observed(r, c))
                    EXPECT_EQ(y.panel.at(r, c), 0.0);
            }
        }
    }
}
