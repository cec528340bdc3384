#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mtcal/error.hpp"
#include "mtcal/panel.hpp"
#include "mtcal/resample.hpp"

namespace mtcal {

enum class Sidedness { one_sided_right, two_sided };

inline const char* to_string(Sidedness s) noexcept
{
    return s == Sidedness::one_sided_right ? "one_sided_right" : "two_sided";
}

struct InjectionConfig {
    double p0 = 0.0;
    EffectMode mode = EffectMode::raw_mean;
    Sidedness sidedness = Sidedness::one_sided_right;
    std::size_t min_obs = kDefaultMinObs;

    void validate() const
    {
        if (!(p0 >= 0.0 && p0 < 1.0))
            fail(ErrorKind::InvalidArgument, "p0 must lie in [0, 1)");
    }
};

/// round(p0 * n), halves rounded up.
inline std::size_t true_count(double p0, std::size_t n)
{
    return static_cast<std::size_t>(std::floor(p0 * static_cast<double>(n) + 0.5 + 1e-9));
}

/// A pseudo-sample whose hypothesis configuration holds exactly in-sample.
struct TruthLabeledPanel {
    ReturnPanel panel;
    std::vector<std::uint8_t> truth;
    std::vector<double> injected_effect;
    std::optional<FactorPanel> factors;
    /// Original column index of each retained column.
    std::vector<std::size_t> source_columns;
    /// Columns removed because their in-sample effect could not be estimated.
    std::vector<std::pair<std::size_t, EstimateStatus>> dropped;

    [[nodiscard]] std::size_t true_total() const
    {
        return static_cast<std::size_t>(std::count(truth.begin(), truth.end(), std::uint8_t{1}));
    }
};

/// Columns that survive the in-sample screen together with their effect estimates.
struct NullBase {
    ReturnPanel panel;  // retained columns, unshifted
    std::vector<std::size_t> source_columns;
    std::vector<std::pair<std::size_t, EstimateStatus>> dropped;
    std::vector<EffectEstimate> estimates;  // in-sample, all ok
};

inline NullBase screen_for_null(const ReturnPanel& panel, const FactorPanel* factors, EffectMode mode,
                                std::size_t min_obs)
{
    const ColumnScreen screen = screen_columns(panel, factors, mode, min_obs);
    if (screen.kept.empty())
        fail(ErrorKind::AllFundsFiltered, "no column has an estimable in-sample effect");
    NullBase base{screen.kept.size() == panel.strategies() ? panel : panel.select_columns(screen.kept),
                  screen.kept, screen.dropped, {}};
    base.estimates = EffectEstimator(base.panel, factors, mode, min_obs).in_sample();
    return base;
}

/// Adds shift[c] to every observed entry of column c.
inline ReturnPanel shift_columns(const ReturnPanel& panel, std::span<const double> shift)
{
    if (shift.size() != panel.strategies())
        fail(ErrorKind::LengthMismatch, "one shift per column is required");
    std::vector<double> values = panel.raw_values();
    const auto& mask = panel.raw_mask();
    const std::size_t d = panel.periods();
    for (std::size_t c = 0; c < panel.strategies(); ++c) {
        for (std::size_t r = 0; r < d; ++r) {
            if (mask[c * d + r])
                values[c * d + r] += shift[c];
        }
    }
    return ReturnPanel(panel.period_labels(), panel.names(), std::move(values), mask);
}

/// Truth labels and per-column shifts for one outer draw, without materializing Y_i.
/// Adding shift[c] to column c of the base panel gives in-sample effect target[c].
struct InjectionPlan {
    std::vector<std::size_t> selected;  // in rank order
    std::vector<std::uint8_t> truth;
    std::vector<double> target;
    std::vector<double> shift;
};

/// `base` holds in-sample effects of X_0, `boot` the effects of the same columns in X_i.
inline InjectionPlan plan_injection(std::span<const EffectEstimate> base, std::span<const EffectEstimate> boot,
                                    const InjectionConfig& cfg)
{
    cfg.validate();
    if (base.size() != boot.size())
        fail(ErrorKind::LengthMismatch, "plan_injection: estimate vectors differ in length");
    const std::size_t n = base.size();
    const std::size_t k = true_count(cfg.p0, n);
    InjectionPlan plan;
    plan.truth.assign(n, 0);
    plan.target.assign(n, 0.0);
    plan.shift.resize(n);
    for (std::size_t c = 0; c < n; ++c)
        plan.shift[c] = -base[c].effect;
    if (k == 0)
        return plan;

    const bool two_sided = cfg.sidedness == Sidedness::two_sided;
    std::vector<std::size_t> order;
    order.reserve(n);
    for (std::size_t c = 0; c < n; ++c) {
        if (boot[c].ok())
            order.push_back(c);
    }
    if (order.size() < k)
        fail(ErrorKind::TooFewObservations, "only " + std::to_string(order.size()) +
                                                " columns have a defined t-statistic in the outer draw; " +
                                                std::to_string(k) + " are needed");
    auto key = [&](std::size_t c) { return two_sided ? std::abs(boot[c].t()) : boot[c].t(); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          const double ka = key(a);
                          const double kb = key(b);
                          return ka != kb ? ka > kb : a < b;
                      });
    plan.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t c : plan.selected) {
        const double effect = boot[c].effect;
        if (!two_sided && !(effect > 0.0))
            fail(ErrorKind::PositivityViolation,
                 "selected column " + std::to_string(c) + " has bootstrapped effect " + std::to_string(effect) +
                     " <= 0; p0 = " + std::to_string(cfg.p0) + " is too large");
        plan.truth[c] = 1;
        plan.target[c] = effect;
        plan.shift[c] = effect - base[c].effect;
    }
    return plan;
}

/// Y_0: every retained column shifted to zero in-sample effect. Columns whose effect cannot be
/// estimated are dropped and reported in `dropped`.
inline TruthLabeledPanel build_null_panel(const ReturnPanel& panel, EffectMode mode,
                                          const FactorPanel* factors = nullptr,
                                          std::size_t min_obs = kDefaultMinObs)
{
    NullBase base = screen_for_null(panel, factors, mode, min_obs);
    std::vector<double> shift(base.estimates.size());
    for (std::size_t c = 0; c < shift.size(); ++c)
        shift[c] = -base.estimates[c].effect;
    TruthLabeledPanel out{shift_columns(base.panel, shift),
                          std::vector<std::uint8_t>(shift.size(), 0),
                          std::vector<double>(shift.size(), 0.0),
                          factors ? std::optional<FactorPanel>(*factors) : std::nullopt,
                          std::move(base.source_columns),
                          std::move(base.dropped)};
    return out;
}

/// Y_i for one outer draw: the top round(p0 N) columns of X_i (ties to the lower index) keep
/// their X_i effect, everything else is shifted to zero effect.
inline TruthLabeledPanel build_alternative_panel(const ReturnPanel& panel, const InjectionConfig& cfg,
                                                 const IndexDraw& outer_draw, const FactorPanel* factors = nullptr)
{
    cfg.validate();
    NullBase base = screen_for_null(panel, factors, cfg.mode, cfg.min_obs);
    const EffectEstimator estimator(base.panel, factors, cfg.mode, cfg.min_obs);
    const auto boot = estimator.estimate(multiplicities(outer_draw, base.panel.periods()));
    const InjectionPlan plan = plan_injection(base.estimates, boot, cfg);
    TruthLabeledPanel out{shift_columns(base.panel, plan.shift),
                          plan.truth,
                          plan.target,
                          factors ? std::optional<FactorPanel>(*factors) : std::nullopt,
                          std::move(base.source_columns),
                          std::move(base.dropped)};
    return out;
}

struct SelectionStats {
    double avg_effect = 0.0;
    double avg_t = 0.0;
};

namespace detail {

inline double median(std::vector<double> v)
{
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Median injected effect and median in-sample t over the true columns of one pseudo-sample.
/// Averaging across draws is left to the caller.
inline SelectionStats selection_stats(const TruthLabeledPanel& labeled, EffectMode mode,
                                      std::size_t min_obs = kDefaultMinObs)
{
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < labeled.truth.size(); ++c) {
        if (labeled.truth[c])
            cols.push_back(c);
    }
    if (cols.empty())
        fail(ErrorKind::NoTrueStrategies, "selection_stats needs at least one true column");
    const FactorPanel* f = labeled.factors ? &*labeled.factors : nullptr;
    const auto est = EffectEstimator(labeled.panel, f, mode, min_obs).in_sample();
    std::vector<double> effects;
    std::vector<double> ts;
    for (std::size_t c : cols) {
        effects.push_back(labeled.injected_effect[c]);
        ts.push_back(est[c].t());
    }
    return {detail::median(effects), detail::median(ts)};
}

} // namespace mtcal
