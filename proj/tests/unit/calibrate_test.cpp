#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "mtcal/calibrate.hpp"
#include "support.hpp"

using namespace mtcal;
using mtcal::test::Gen;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

CalibrationRequest small_request(std::uint64_t data_seed = 1)
{
    Gen g(data_seed);
    std::vector<double> means(40, 0.0);
    for (std::size_t c = 0; c < 6; ++c)
        means[c] = 0.02;
    CalibrationRequest req;
    req.panel = g.panel(60, 40, 0.05, means);
    req.p0_grid = {0.0, 0.1};
    req.alpha_grid = {0.05, 0.1};
    req.cutoff_grid = {1.5, 2.0, 2.5, 3.0, kInf};
    req.procedures = {ProcedureSpec::parse("bh"), ProcedureSpec::parse("by"), ProcedureSpec::parse("storey(0.6)")};
    req.plan = {7, 6, 20, 0};
    return req;
}

void expect_same(const ErrorRateReport& a, const ErrorRateReport& b)
{
    ASSERT_EQ(a.cells.size(), b.cells.size());
    for (std::size_t k = 0; k < a.cells.size(); ++k) {
        const auto& x = a.cells[k];
        const auto& y = b.cells[k];
        EXPECT_EQ(x.method, y.method);
        EXPECT_EQ(x.valid, y.valid);
        EXPECT_EQ(x.type1, y.type1);
        EXPECT_EQ(x.type2, y.type2);
        EXPECT_EQ(x.oratio, y.oratio);
        EXPECT_EQ(x.tpr, y.tpr);
        EXPECT_EQ(x.fpr, y.fpr);
    }
}

} // namespace

TEST(ProcedureSpec, ParseAndLabel)
{
    EXPECT_EQ(ProcedureSpec::parse("storey(0.4)").label(), "storey(0.4)");
    EXPECT_EQ(ProcedureSpec::parse("rsw").kind, ProcedureKind::rsw);
    for (const char* bad : {"holm", "storey(1.5)", "storey(x)", "storey(0.4"}) {
        try {
            (void)ProcedureSpec::parse(bad);
            FAIL() << bad;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Config);
        }
    }
}

TEST(DoubleBootstrap, RequestValidation)
{
    auto req = small_request();
    req.cutoff_grid = {2.0, 1.5};
    EXPECT_THROW((void)double_bootstrap(req), Error);
    req = small_request();
    req.alpha_grid = {0.0};
    EXPECT_THROW((void)double_bootstrap(req), Error);
    req = small_request();
    req.mode = EffectMode::factor_alpha;
    EXPECT_THROW((void)double_bootstrap(req), Error);
}

TEST(DoubleBootstrap, NoTrueStrategiesMeansNoMisses)
{
    const auto report = double_bootstrap(small_request());
    for (const auto& c : report.cells) {
        if (c.p0 != 0.0)
            continue;
        ASSERT_TRUE(c.valid);
        EXPECT_EQ(c.type2.mean, 0.0) << c.method << " " << c.level;
        EXPECT_EQ(c.oratio.mean, 0.0);
        EXPECT_EQ(c.tpr.mean, 0.0);
    }
}

TEST(DoubleBootstrap, InfiniteCutoffNeverRejects)
{
    const auto report = double_bootstrap(small_request());
    for (double p0 : {0.0, 0.1}) {
        const auto& c = report.at(p0, kCutoffMethod, kInf);
        EXPECT_EQ(c.type1.mean, 0.0);
        EXPECT_EQ(c.fpr.mean, 0.0);
        EXPECT_EQ(c.tpr.mean, 0.0);
    }
}

TEST(DoubleBootstrap, CellGridAndProvenance)
{
    const auto req = small_request();
    const auto report = double_bootstrap(req);
    EXPECT_EQ(report.cells.size(), 2u * (5 + 3 * 2));
    EXPECT_EQ(report.provenance.I, 6u);
    EXPECT_EQ(report.provenance.J, 20u);
    EXPECT_EQ(report.provenance.strategies, 40u);
    EXPECT_EQ(report.provenance.procedures, (std::vector<std::string>{"bh", "by", "storey(0.6)"}));
    EXPECT_TRUE(report.provenance.rsw_variant.empty());
    EXPECT_NE(report.find(0.1, "storey(0.6)", 0.05), nullptr);
    EXPECT_EQ(report.find(0.1, "storey(0.6)", 0.2), nullptr);
    EXPECT_THROW((void)report.at(0.2, "bh", 0.05), Error);
}

TEST(DoubleBootstrap, ThreadCountDoesNotChangeResults)
{
    const auto req = small_request();
    expect_same(double_bootstrap(req, 1), double_bootstrap(req, 3));
}

TEST(DoubleBootstrap, SeedChangesResults)
{
    auto req = small_request();
    const auto a = double_bootstrap(req);
    req.plan.master_seed = 8;
    const auto b = double_bootstrap(req);
    EXPECT_NE(a.at(0.1, "bh", 0.1).type1, b.at(0.1, "bh", 0.1).type1);
}

TEST(DoubleBootstrap, ProcedureContainmentOrdersPowerAndFalseRejections)
{
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto report = double_bootstrap(small_request(seed));
        for (double p0 : {0.0, 0.1}) {
            for (double a : {0.05, 0.1}) {
                const auto& by = report.at(p0, "by", a);
                const auto& bh = report.at(p0, "bh", a);
                const auto& st = report.at(p0, "storey(0.6)", a);
                EXPECT_LE(by.tpr.mean, bh.tpr.mean);
                EXPECT_LE(bh.tpr.mean, st.tpr.mean);
                EXPECT_LE(by.fpr.mean, bh.fpr.mean);
                EXPECT_LE(bh.fpr.mean, st.fpr.mean);
            }
        }
    }
}

TEST(DoubleBootstrap, CutoffRatesAreMonotoneAtZeroP0)
{
    // with no true strategies every rejection is false, so TYPE1 = P(any rejection) per draw
    const auto report = double_bootstrap(small_request());
    double prev = 1.0;
    for (double c : {1.5, 2.0, 2.5, 3.0, kInf}) {
        const double t1 = report.at(0.0, kCutoffMethod, c).type1.mean;
        EXPECT_LE(t1, prev);
        prev = t1;
    }
}

TEST(DoubleBootstrap, StandardErrorShrinksWithOuterIterations)
{
    auto req = small_request();
    req.p0_grid = {0.1};
    req.plan.J = 10;
    req.plan.I = 4;
    const double se4 = double_bootstrap(req).at(0.1, kCutoffMethod, 2.0).type1.se;
    req.plan.I = 36;
    const double se36 = double_bootstrap(req).at(0.1, kCutoffMethod, 2.0).type1.se;
    EXPECT_GT(se4, 0.0);
    EXPECT_LT(se36, se4);
    // the spread itself is estimated, so only the order of magnitude of the 1/sqrt(I) law is checked
    const double ratio = (se4 * 2.0) / (se36 * 6.0);
    EXPECT_GT(ratio, 1.0 / 3.0);
    EXPECT_LT(ratio, 3.0);
}

TEST(DoubleBootstrap, PositivityFailureIsolatedToItsCells)
{
    Gen g(4);
    CalibrationRequest req;
    req.panel = g.panel(60, 30, 0.01, std::vector<double>(30, -0.05));
    req.p0_grid = {0.0, 0.5};
    req.alpha_grid = {0.05};
    req.cutoff_grid = {2.0};
    req.procedures = {ProcedureSpec::parse("bh")};
    req.plan = {1, 3, 5, 0};
    const auto report = double_bootstrap(req);
    EXPECT_TRUE(report.at(0.0, "bh", 0.05).valid);
    EXPECT_TRUE(report.at(0.0, kCutoffMethod, 2.0).valid);
    const auto& bad = report.at(0.5, "bh", 0.05);
    EXPECT_FALSE(bad.valid);
    EXPECT_NE(bad.error.find("p0"), std::string::npos);
    EXPECT_TRUE(std::isnan(bad.type1.mean));
    EXPECT_FALSE(report.at(0.5, kCutoffMethod, 2.0).valid);
}

TEST(DoubleBootstrap, HooksResumeFromStoredTallies)
{
    const auto req = small_request();
    std::map<std::size_t, OuterTally> stored;
    CalibrationHooks save;
    save.store = [&](std::size_t i, const OuterTally& t) { stored[i] = t; };
    const auto full = double_bootstrap(req, 2, save);
    ASSERT_EQ(stored.size(), req.plan.I);

    std::size_t loaded = 0;
    std::size_t computed = 0;
    CalibrationHooks resume;
    resume.load = [&](std::size_t i) -> std::optional<OuterTally> {
        if (i % 2 == 0) {
            ++loaded;
            return stored.at(i);
        }
        return std::nullopt;
    };
    resume.store = [&](std::size_t, const OuterTally&) { ++computed; };
    expect_same(full, double_bootstrap(req, 1, resume));
    EXPECT_EQ(loaded, 3u);
    EXPECT_EQ(computed, 3u);

    CalibrationHooks wrong;
    wrong.load = [](std::size_t) -> std::optional<OuterTally> { return OuterTally(1); };
    try {
        (void)double_bootstrap(req, 1, wrong);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
}

TEST(DoubleBootstrap, RswCellsUseTheStepDownVariant)
{
    auto req = small_request();
    req.p0_grid = {0.1};
    req.cutoff_grid.clear();
    req.alpha_grid = {0.1};
    req.procedures = {ProcedureSpec::parse("rsw"), ProcedureSpec::parse("bh")};
    req.plan = {3, 2, 3, 0};
    req.rsw.B = 100;
    const auto report = double_bootstrap(req);
    EXPECT_EQ(report.provenance.rsw_variant, kRswTag);
    const auto& cell = report.at(0.1, "rsw", 0.1);
    ASSERT_TRUE(cell.valid) << cell.error;
    EXPECT_GE(cell.tpr.mean, 0.0);
    EXPECT_LE(cell.tpr.mean, 1.0);
    req.rsw.B = 50;
    EXPECT_THROW((void)double_bootstrap(req), Error);
}

TEST(SelectCutoff, LargestAdmissibleRate)
{
    const std::vector<double> grid{1.5, 2.0, 2.5, 3.0};
    const std::vector<double> se{0.01, 0.01, 0.01, 0.01};
    auto c = select_cutoff(grid, std::vector<double>{0.2, 0.04, 0.05, 0.01}, se, 0.05);
    EXPECT_TRUE(c.attained);
    EXPECT_EQ(c.t_star, 2.5);
    EXPECT_EQ(c.index, 2u);
    // equal rates go to the smaller cutoff
    c = select_cutoff(grid, std::vector<double>{0.2, 0.03, 0.03, 0.01}, se, 0.05);
    EXPECT_EQ(c.t_star, 2.0);
    c = select_cutoff(grid, std::vector<double>{0.2, 0.2, 0.1, 0.09}, se, 0.05);
    EXPECT_FALSE(c.attained);
    EXPECT_EQ(c.t_star, 3.0);
    EXPECT_THROW((void)select_cutoff(grid, std::vector<double>{0.1}, se, 0.05), Error);
}

TEST(SolveCutoff, DefaultGrid)
{
    const auto g = default_cutoff_grid();
    ASSERT_EQ(g.size(), 36u);
    EXPECT_EQ(g.front(), 1.5);
    EXPECT_EQ(g[5], 2.0);
    EXPECT_EQ(g.back(), 5.0);
}

TEST(SolveCutoff, TargetOneTakesSmallestCutoff)
{
    const auto req = small_request();
    const auto sol = solve_cutoff(req.panel, nullptr, 0.0, 1.0, {3, 4, 10, 0});
    EXPECT_TRUE(sol.choice.attained);
    EXPECT_EQ(sol.choice.t_star, 1.5);
    EXPECT_EQ(sol.grid.size(), 36u);
}

TEST(SolveCutoff, ChosenPointIsAdmissibleAndGridIsDense)
{
    const auto req = small_request();
    const auto sol = solve_cutoff(req.panel, nullptr, 0.1, 0.05, {5, 8, 20, 0});
    ASSERT_TRUE(sol.choice.attained);
    EXPECT_LE(sol.choice.achieved_type1, 0.05);
    for (std::size_t k = 0; k < sol.grid.size(); ++k) {
        if (sol.type1[k] <= 0.05)
            EXPECT_LE(sol.type1[k], sol.choice.achieved_type1);
    }
    for (std::size_t k = 1; k < sol.grid.size(); ++k)
        EXPECT_NEAR(sol.grid[k] - sol.grid[k - 1], 0.1, 1e-9);
}

TEST(CompareMethods, OptimalCutoffRespectsTarget)
{
    auto req = small_request();
    req.cutoff_grid.clear();
    const auto report = compare_methods(req);
    for (double p0 : {0.0, 0.1}) {
        for (double a : {0.05, 0.1}) {
            const auto& opt = report.at(p0, kOptimalMethod, a);
            ASSERT_TRUE(opt.valid) << opt.error;
            ASSERT_TRUE(opt.cutoff.has_value());
            if (*opt.attained)
                EXPECT_LE(opt.type1.mean, a);
            const auto& chosen = report.at(p0, kCutoffMethod, *opt.cutoff);
            EXPECT_EQ(opt.type2, chosen.type2);
            EXPECT_LE(report.at(p0, "by", a).tpr.mean, report.at(p0, "bh", a).tpr.mean);
        }
    }
    req.alpha_grid.clear();
    req.procedures.clear();
    EXPECT_THROW((void)compare_methods(req), Error);
}
