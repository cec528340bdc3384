#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtcal/error.hpp"
#include "mtcal/inject.hpp"
#include "mtcal/panel.hpp"
#include "mtcal/parallel.hpp"
#include "mtcal/resample.hpp"

namespace mtcal {

/// A cross-sectional statistic of t-values: the maximum or the q-th percentile.
struct PercentileSpec {
    double q = 100.0;
    bool is_max = true;

    static PercentileSpec max() { return {100.0, true}; }
    static PercentileSpec percentile(double q)
    {
        if (!(q > 0.0 && q <= 100.0))
            fail(ErrorKind::InvalidArgument, "percentile must lie in (0, 100]");
        return {q, false};
    }

    [[nodiscard]] std::string label() const
    {
        if (is_max)
            return "max";
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", q);
        return buf;
    }

    static PercentileSpec parse(const std::string& text)
    {
        if (text == "max")
            return max();
        double q = 0.0;
        if (!detail::parse_double(text, q))
            fail(ErrorKind::Config, "unknown statistic '" + text + "'");
        return percentile(q);
    }
};

inline std::vector<PercentileSpec> default_statistics()
{
    return {PercentileSpec::max(),            PercentileSpec::percentile(99.9), PercentileSpec::percentile(99.5),
            PercentileSpec::percentile(99.0), PercentileSpec::percentile(98.0), PercentileSpec::percentile(95.0),
            PercentileSpec::percentile(90.0)};
}

/// 1-based rank of the q-th percentile among n values: ceil(q/100 * n), at least 1.
inline std::size_t percentile_rank(double q, std::size_t n)
{
    const double r = std::ceil(q / 100.0 * static_cast<double>(n) - 1e-9);
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(r, 1.0)), 1, n);
}

/// Order statistic of an ascending vector.
inline double percentile_of_sorted(std::span<const double> sorted, const PercentileSpec& spec)
{
    if (sorted.empty())
        fail(ErrorKind::EmptyInput, "percentile of an empty vector");
    if (spec.is_max)
        return sorted.back();
    return sorted[percentile_rank(spec.q, sorted.size()) - 1];
}

inline double percentile_stat(std::span<const double> values, const PercentileSpec& spec)
{
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    return percentile_of_sorted(v, spec);
}

struct JointTestConfig {
    std::vector<PercentileSpec> statistics = default_statistics();
    std::size_t B = 1000;
    std::size_t min_obs_T = 8;
    std::vector<double> alpha_levels{0.01, 0.05, 0.10};
    EffectMode mode = EffectMode::factor_alpha;

    void validate() const
    {
        if (statistics.empty())
            fail(ErrorKind::InvalidArgument, "joint test needs at least one statistic");
        if (B < 1)
            fail(ErrorKind::InsufficientIterations, "joint test needs B >= 1");
        if (min_obs_T < 2)
            fail(ErrorKind::InvalidArgument, "min_obs_T must be at least 2");
        for (double a : alpha_levels) {
            if (!(a > 0.0 && a <= 1.0))
                fail(ErrorKind::InvalidArgument, "joint-test levels must lie in (0, 1]");
        }
    }
};

struct JointStatResult {
    PercentileSpec spec;
    double observed = 0.0;
    double p_value = 1.0;
    std::size_t B = 0;
};

struct JointTestResult {
    std::vector<JointStatResult> stats;
    std::size_t funds = 0;
    std::size_t filtered = 0;
};

namespace detail {

inline std::size_t regression_min_obs(const JointTestConfig& cfg, const FactorPanel* factors)
{
    const std::size_t k = cfg.mode == EffectMode::factor_alpha && factors ? factors->factors() : 0;
    return std::max(cfg.min_obs_T, k + 2);
}

/// Joint test on the sample reached by `base` weights over the estimator's panel, with
/// `shift[c]` added to every return of fund c. The null pseudo-sample subtracts each fund's
/// effect in that sample, so the shift only moves the observed statistics.
inline JointTestResult joint_test_on_draw(const EffectEstimator& estimator, const IndexDraw& base,
                                          std::span<const double> shift, const JointTestConfig& cfg,
                                          std::uint64_t seed, std::uint64_t replication)
{
    const std::size_t n = estimator.panel().strategies();
    const std::size_t d = estimator.panel().periods();
    std::vector<EffectEstimate> est(n);
    estimator.estimate(multiplicities(base, d), est);

    std::vector<std::size_t> funds;
    std::vector<double> centre;
    std::vector<double> observed;
    for (std::size_t c = 0; c < n; ++c) {
        if (!est[c].ok())
            continue;
        funds.push_back(c);
        centre.push_back(est[c].effect);
        observed.push_back((est[c].effect + (shift.empty() ? 0.0 : shift[c])) / est[c].se);
    }
    if (funds.empty())
        fail(ErrorKind::AllFundsFiltered, "no fund passes the minimum-observation and rank screens");
    std::sort(observed.begin(), observed.end());

    const std::size_t ns = cfg.statistics.size();
    JointTestResult result;
    result.funds = funds.size();
    result.filtered = n - funds.size();
    result.stats.resize(ns);
    std::vector<std::size_t> exceed(ns, 0);
    for (std::size_t s = 0; s < ns; ++s) {
        result.stats[s].spec = cfg.statistics[s];
        result.stats[s].observed = percentile_of_sorted(observed, cfg.statistics[s]);
        result.stats[s].B = cfg.B;
    }
    std::vector<double> tb;
    tb.reserve(funds.size());
    for (std::size_t b = 0; b < cfg.B; ++b) {
        const IndexDraw draw =
            compose(base, draw_indices(derive_seed(seed, Stage::joint_test, replication, b), d));
        estimator.estimate(multiplicities(draw, d), est);
        tb.clear();
        for (std::size_t a = 0; a < funds.size(); ++a) {
            const EffectEstimate& e = est[funds[a]];
            if (e.ok())
                tb.push_back((e.effect - centre[a]) / e.se);
        }
        std::sort(tb.begin(), tb.end());
        for (std::size_t s = 0; s < ns; ++s) {
            const double v = tb.empty() ? -std::numeric_limits<double>::infinity()
                                        : percentile_of_sorted(tb, cfg.statistics[s]);
            if (v >= result.stats[s].observed)
                ++exceed[s];
        }
    }
    for (std::size_t s = 0; s < ns; ++s)
        result.stats[s].p_value = static_cast<double>(1 + exceed[s]) / static_cast<double>(cfg.B + 1);
    return result;
}

} // namespace detail

/// Fama-French style joint test of zero effect for every fund: cross-sectional statistics of
/// t-values against their distribution over bootstraps of the null pseudo-sample. Funds need
/// min_obs_T observations in the actual sample and again in each bootstrap sample.
inline JointTestResult ff_joint_test(const ReturnPanel& panel, const FactorPanel* factors, const JointTestConfig& cfg,
                                     std::uint64_t seed)
{
    cfg.validate();
    const EffectEstimator estimator(panel, cfg.mode == EffectMode::factor_alpha ? factors : nullptr, cfg.mode,
                                    detail::regression_min_obs(cfg, factors));
    return detail::joint_test_on_draw(estimator, IndexDraw::identity(panel.periods()), {}, cfg, seed, 0);
}

struct FfStatRates {
    PercentileSpec spec;
    std::vector<double> rejection_rate;     // per level: mean h (p0 = 0) or 1 - TYPE2
    std::vector<double> nonrejection_rate;  // per level: mean l
    std::vector<double> se;                 // binomial MC standard error per level
};

struct FfErrorRates {
    double p0 = 0.0;
    std::size_t M = 0;
    std::vector<double> levels;
    std::vector<FfStatRates> stats;
    /// p0 > 0: averages over m of the within-draw median injected effect and t.
    std::optional<double> avg_effect;
    std::optional<double> avg_t;
    double avg_funds = 0.0;

    /// TYPE1_ff when p0 = 0, TYPE2_ff when p0 > 0.
    [[nodiscard]] double error_rate(std::size_t stat, std::size_t level) const
    {
        return p0 == 0.0 ? stats[stat].rejection_rate[level] : stats[stat].nonrejection_rate[level];
    }
};

/// p0 = 0: perturb the null pseudo-sample M times and record how often the joint test rejects.
/// p0 > 0: M times, inject the top-p0 effects of an outer bootstrap draw and record how often
/// the joint test fails to reject on the injected panel.
inline FfErrorRates ff_error_rates(const ReturnPanel& panel, const FactorPanel* factors, double p0,
                                   const JointTestConfig& cfg, std::size_t M, std::uint64_t seed,
                                   std::size_t threads = 1)
{
    cfg.validate();
    if (M < 1)
        fail(ErrorKind::InsufficientIterations, "ff_error_rates needs M >= 1");
    const FactorPanel* f = cfg.mode == EffectMode::factor_alpha ? factors : nullptr;
    const std::size_t min_obs = detail::regression_min_obs(cfg, f);
    const NullBase base = screen_for_null(panel, f, cfg.mode, min_obs);
    const EffectEstimator estimator(base.panel, f, cfg.mode, min_obs);
    const std::size_t d = base.panel.periods();
    const std::size_t n = base.panel.strategies();
    const InjectionConfig icfg{p0, cfg.mode, Sidedness::one_sided_right, min_obs};
    icfg.validate();

    struct Outcome {
        JointTestResult test;
        std::optional<SelectionStats> selection;
    };
    std::vector<Outcome> outcomes(M);
    parallel_for(M, threads, [&](std::size_t m) {
        std::vector<double> shift(n);
        if (p0 == 0.0) {
            for (std::size_t c = 0; c < n; ++c)
                shift[c] = -base.estimates[c].effect;
            const IndexDraw perturb = draw_indices(derive_seed(seed, Stage::perturb, m), d);
            outcomes[m].test = detail::joint_test_on_draw(estimator, perturb, shift, cfg, seed, m);
            return;
        }
        const auto boot = estimator.estimate(multiplicities(draw_indices(derive_seed(seed, Stage::outer, m), d), d));
        const InjectionPlan plan = plan_injection(base.estimates, boot, icfg);
        outcomes[m].test =
            detail::joint_test_on_draw(estimator, IndexDraw::identity(d), plan.shift, cfg, seed, m);
        std::vector<double> effects;
        std::vector<double> ts;
        const auto in_sample = base.estimates;
        for (std::size_t c : plan.selected) {
            effects.push_back(plan.target[c]);
            ts.push_back(plan.target[c] / in_sample[c].se);
        }
        outcomes[m].selection = SelectionStats{mtcal::detail::median(effects), mtcal::detail::median(ts)};
    });

    FfErrorRates out;
    out.p0 = p0;
    out.M = M;
    out.levels = cfg.alpha_levels;
    const double Md = static_cast<double>(M);
    for (std::size_t s = 0; s < cfg.statistics.size(); ++s) {
        FfStatRates r;
        r.spec = cfg.statistics[s];
        for (double level : cfg.alpha_levels) {
            std::size_t rejected = 0;
            for (const auto& o : outcomes)
                rejected += o.test.stats[s].p_value <= level ? 1 : 0;
            const double rate = static_cast<double>(rejected) / Md;
            r.rejection_rate.push_back(rate);
            r.nonrejection_rate.push_back(static_cast<double>(M - rejected) / Md);
            r.se.push_back(std::sqrt(rate * (1.0 - rate) / Md));
        }
        out.stats.push_back(std::move(r));
    }
    double funds = 0.0;
    for (const auto& o : outcomes)
        funds += static_cast<double>(o.test.funds);
    out.avg_funds = funds / Md;
    if (p0 > 0.0) {
        double e = 0.0;
        double t = 0.0;
        for (const auto& o : outcomes) {
            e += o.selection->avg_effect;
            t += o.selection->avg_t;
        }
        out.avg_effect = e / Md;
        out.avg_t = t / Md;
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Frac: the largest top fraction whose percentiles are all jointly significant.
// ---------------------------------------------------------------------------------------------

struct FracConfig {
    double upper_bound = 0.40;
    double grid_step = 0.01;
    double level = 0.05;
};

namespace detail {

inline std::vector<double> frac_grid(const FracConfig& fc)
{
    if (!(fc.grid_step > 0.0 && fc.upper_bound > 0.0 && fc.upper_bound < 1.0))
        fail(ErrorKind::InvalidArgument, "frac grid must satisfy 0 < step and 0 < upper bound < 1");
    std::vector<double> grid;
    const auto n = static_cast<std::size_t>(std::floor(fc.upper_bound / fc.grid_step + 1e-9));
    for (std::size_t k = 1; k <= n; ++k)
        grid.push_back(static_cast<double>(k) * fc.grid_step);
    return grid;
}

inline double frac_from_result(const JointTestResult& r, std::span<const double> grid, double level)
{
    double frac = 0.0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!(r.stats[k].p_value <= level))
            break;
        frac = grid[k];
    }
    return frac;
}

inline JointTestConfig frac_test_config(const JointTestConfig& cfg, std::span<const double> grid)
{
    JointTestConfig c = cfg;
    c.statistics.clear();
    for (double dd : grid)
        c.statistics.push_back(PercentileSpec::percentile(100.0 * (1.0 - dd)));
    return c;
}

} // namespace detail

/// Largest D on the grid such that the (100 - 100 d)th percentile is significant for every d <= D;
/// 0 when even the first fails.
inline double frac_statistic(const ReturnPanel& panel, const FactorPanel* factors, const JointTestConfig& cfg,
                             std::uint64_t seed, const FracConfig& fc = {})
{
    const auto grid = detail::frac_grid(fc);
    const JointTestResult r = ff_joint_test(panel, factors, detail::frac_test_config(cfg, grid), seed);
    return detail::frac_from_result(r, grid, fc.level);
}

struct FracSimulation {
    double p0 = 0.0;
    std::vector<double> values;  // I x J, row-major
    double mean = 0.0;
    double prob_at_least_10pct = 0.0;
};

/// Distribution of Frac over pseudo-samples with a known fraction p0 of true strategies: for each
/// outer draw i the top-p0 effects are injected, and each of J perturbations is tested.
inline FracSimulation frac_simulation(const ReturnPanel& panel, const FactorPanel* factors, double p0,
                                      const JointTestConfig& cfg, std::size_t I, std::size_t J, std::uint64_t seed,
                                      const FracConfig& fc = {}, std::size_t threads = 1)
{
    cfg.validate();
    if (I < 1 || J < 1)
        fail(ErrorKind::InsufficientIterations, "frac simulation needs I, J >= 1");
    const FactorPanel* f = cfg.mode == EffectMode::factor_alpha ? factors : nullptr;
    const std::size_t min_obs = detail::regression_min_obs(cfg, f);
    const NullBase base = screen_for_null(panel, f, cfg.mode, min_obs);
    const EffectEstimator estimator(base.panel, f, cfg.mode, min_obs);
    const std::size_t d = base.panel.periods();
    const auto grid = detail::frac_grid(fc);
    const JointTestConfig tcfg = detail::frac_test_config(cfg, grid);
    const InjectionConfig icfg{p0, cfg.mode, Sidedness::one_sided_right, min_obs};
    icfg.validate();

    FracSimulation out;
    out.p0 = p0;
    out.values.resize(I * J);
    parallel_for(I, threads, [&](std::size_t i) {
        const auto boot = estimator.estimate(multiplicities(draw_indices(derive_seed(seed, Stage::outer, i), d), d));
        const InjectionPlan plan = plan_injection(base.estimates, boot, icfg);
        for (std::size_t j = 0; j < J; ++j) {
            const IndexDraw perturb = draw_indices(derive_seed(seed, Stage::perturb, i, j), d);
            const JointTestResult r =
                detail::joint_test_on_draw(estimator, perturb, plan.shift, tcfg, seed, i * J + j);
            out.values[i * J + j] = detail::frac_from_result(r, grid, fc.level);
        }
    });
    double sum = 0.0;
    std::size_t big = 0;
    for (double v : out.values) {
        sum += v;
        big += v >= 0.10 - 1e-12 ? 1 : 0;
    }
    out.mean = sum / static_cast<double>(out.values.size());
    out.prob_at_least_10pct = static_cast<double>(big) / static_cast<double>(out.values.size());
    return out;
}

// ---------------------------------------------------------------------------------------------
// Subsample windows.
// ---------------------------------------------------------------------------------------------

/// Half-open range of period indices.
struct PeriodWindow {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Window covering the inclusive label range [first, last].
inline PeriodWindow window_from_labels(const std::vector<std::string>& labels, const std::string& first,
                                       const std::string& last)
{
    const auto lo = std::find(labels.begin(), labels.end(), first);
    const auto hi = std::find(labels.begin(), labels.end(), last);
    if (lo == labels.end() || hi == labels.end())
        fail(ErrorKind::OutOfRange, "window label '" + (lo == labels.end() ? first : last) + "' not in the panel");
    if (hi < lo)
        fail(ErrorKind::InvalidArgument, "window ends before it starts");
    return {static_cast<std::size_t>(lo - labels.begin()), static_cast<std::size_t>(hi - labels.begin()) + 1};
}

struct WindowPanel {
    PeriodWindow window;
    ReturnPanel panel;
    std::optional<FactorPanel> factors;
    std::vector<std::string> excluded;
};

/// One panel per window. Funds without observations in a window are excluded from it; with
/// `complete_only` so are funds missing any period of the window.
inline std::vector<WindowPanel> subsample_split(const ReturnPanel& panel, std::span<const PeriodWindow> windows,
                                                bool complete_only, const FactorPanel* factors = nullptr)
{
    if (windows.empty())
        fail(ErrorKind::EmptyInput, "no windows given");
    for (std::size_t w = 0; w < windows.size(); ++w) {
        if (windows[w].end <= windows[w].begin)
            fail(ErrorKind::EmptyInput, "window " + std::to_string(w) + " is empty");
        if (windows[w].end > panel.periods())
            fail(ErrorKind::OutOfRange, "window " + std::to_string(w) + " extends beyond the panel");
        if (w > 0 && windows[w].begin < windows[w - 1].end)
            fail(ErrorKind::InvalidArgument, "windows must be ordered and non-overlapping");
    }
    if (factors)
        factors->require_aligned(panel);
    std::vector<WindowPanel> out;
    for (const auto& win : windows) {
        const std::size_t len = win.end - win.begin;
        std::vector<std::string> labels(panel.period_labels().begin() + static_cast<std::ptrdiff_t>(win.begin),
                                        panel.period_labels().begin() + static_cast<std::ptrdiff_t>(win.end));
        std::vector<std::string> names;
        std::vector<double> values;
        std::vector<std::uint8_t> mask;
        WindowPanel wp;
        wp.window = win;
        for (std::size_t c = 0; c < panel.strategies(); ++c) {
            std::size_t obs = 0;
            for (std::size_t r = win.begin; r < win.end; ++r)
                obs += panel.observed(r, c) ? 1 : 0;
            if (obs == 0 || (complete_only && obs < len)) {
                wp.excluded.push_back(panel.names()[c]);
                continue;
            }
            names.push_back(panel.names()[c]);
            for (std::size_t r = win.begin; r < win.end; ++r) {
                values.push_back(panel.at(r, c));
                mask.push_back(panel.observed(r, c) ? 1 : 0);
            }
        }
        if (names.empty())
            fail(ErrorKind::AllFundsFiltered, "no fund survives in window starting at " + labels.front());
        wp.panel = ReturnPanel(labels, std::move(names), std::move(values), std::move(mask));
        if (factors) {
            std::vector<double> fv;
            for (std::size_t r = win.begin; r < win.end; ++r) {
                const auto row = factors->row(r);
                fv.insert(fv.end(), row.begin(), row.end());
            }
            wp.factors = FactorPanel(labels, factors->names(), std::move(fv));
        }
        out.push_back(std::move(wp));
    }
    return out;
}

} // namespace mtcal
