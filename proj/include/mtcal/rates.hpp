#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mtcal/error.hpp"
#include "mtcal/inject.hpp"
#include "mtcal/panel.hpp"
#include "mtcal/resample.hpp"

namespace mtcal {

/// Outcome tally for one draw at one decision rule.
struct ContingencyCounts {
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tp = 0;

    [[nodiscard]] std::uint64_t total() const noexcept { return tn + fp + fn + tp; }
    bool operator==(const ContingencyCounts&) const = default;
};

inline ContingencyCounts count_outcomes(std::span<const std::uint8_t> decisions, std::span<const std::uint8_t> truth)
{
    if (decisions.size() != truth.size())
        fail(ErrorKind::LengthMismatch, "count_outcomes: decisions and truth differ in length");
    ContingencyCounts c;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const bool d = decisions[i] != 0;
        if (truth[i])
            (d ? c.tp : c.fn) += 1;
        else
            (d ? c.fp : c.tn) += 1;
    }
    return c;
}

struct RealizedRates {
    double rfdr = 0.0;
    double rmiss = 0.0;
    double rratio = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;

    bool operator==(const RealizedRates&) const = default;
};

/// Every zero denominator maps to 0.
inline RealizedRates realized_rates(const ContingencyCounts& c) noexcept
{
    auto ratio = [](std::uint64_t num, std::uint64_t den) {
        return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
    };
    RealizedRates r;
    r.rfdr = ratio(c.fp, c.fp + c.tp);
    r.rmiss = ratio(c.fn, c.fn + c.tn);
    r.rratio = ratio(c.fp, c.fn);
    r.tpr = ratio(c.tp, c.tp + c.fn);
    r.fpr = ratio(c.fp, c.fp + c.tn);
    return r;
}

/// Means over all (i, j) entries: TYPE1, TYPE2, ORATIO and the ROC coordinates.
struct AggregateRates {
    double type1 = 0.0;
    double type2 = 0.0;
    double oratio = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
    std::size_t count = 0;
};

/// Running sums, added in the caller's (i, j) order.
class RateAccumulator {
public:
    void add(const RealizedRates& r) noexcept
    {
        sum_.type1 += r.rfdr;
        sum_.type2 += r.rmiss;
        sum_.oratio += r.rratio;
        sum_.tpr += r.tpr;
        sum_.fpr += r.fpr;
        ++sum_.count;
    }

    void add(const ContingencyCounts& c) noexcept { add(realized_rates(c)); }

    [[nodiscard]] std::size_t count() const noexcept { return sum_.count; }

    [[nodiscard]] AggregateRates mean() const
    {
        if (sum_.count == 0)
            fail(ErrorKind::EmptyInput, "no rates to aggregate");
        const double n = static_cast<double>(sum_.count);
        return {sum_.type1 / n, sum_.type2 / n, sum_.oratio / n, sum_.tpr / n, sum_.fpr / n, sum_.count};
    }

private:
    AggregateRates sum_;
};

inline AggregateRates aggregate(std::span<const RealizedRates> rates)
{
    RateAccumulator acc;
    for (const auto& r : rates)
        acc.add(r);
    return acc.mean();
}

/// Rejection decision for a single t-statistic. Undefined statistics are never rejected,
/// except that a cutoff of -inf rejects everything.
inline bool reject_t(double t, double cutoff, Sidedness sidedness) noexcept
{
    if (cutoff == -std::numeric_limits<double>::infinity())
        return true;
    if (std::isnan(t))
        return false;
    return sidedness == Sidedness::one_sided_right ? t > cutoff : std::abs(t) > cutoff;
}

struct RocPoint {
    double cutoff = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

/// Average (FPR, TPR) across draws of `labeled` at each cutoff, bracketed by the -inf and +inf
/// endpoints. The result is ordered from -inf upwards.
inline std::vector<RocPoint> roc_curve(const TruthLabeledPanel& labeled, std::span<const IndexDraw> draws,
                                       std::span<const double> cutoff_grid, EffectMode mode,
                                       Sidedness sidedness = Sidedness::one_sided_right,
                                       std::size_t min_obs = kDefaultMinObs)
{
    if (cutoff_grid.empty())
        fail(ErrorKind::EmptyInput, "roc_curve: empty cutoff grid");
    for (std::size_t g = 1; g < cutoff_grid.size(); ++g) {
        if (!(cutoff_grid[g] > cutoff_grid[g - 1]))
            fail(ErrorKind::InvalidArgument, "roc_curve: cutoff grid must be strictly increasing");
    }
    if (draws.empty())
        fail(ErrorKind::EmptyInput, "roc_curve: no draws");
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> cutoffs;
    cutoffs.push_back(-inf);
    cutoffs.insert(cutoffs.end(), cutoff_grid.begin(), cutoff_grid.end());
    cutoffs.push_back(inf);

    const FactorPanel* f = labeled.factors ? &*labeled.factors : nullptr;
    const EffectEstimator estimator(labeled.panel, f, mode, min_obs);
    const std::size_t n = labeled.panel.strategies();
    std::vector<RateAccumulator> acc(cutoffs.size());
    std::vector<EffectEstimate> est(n);
    std::vector<std::uint8_t> decisions(n);
    for (const auto& draw : draws) {
        estimator.estimate(multiplicities(draw, labeled.panel.periods()), est);
        for (std::size_t g = 0; g < cutoffs.size(); ++g) {
            for (std::size_t c = 0; c < n; ++c)
                decisions[c] = reject_t(est[c].t(), cutoffs[g], sidedness) ? 1 : 0;
            acc[g].add(count_outcomes(decisions, labeled.truth));
        }
    }
    std::vector<RocPoint> out(cutoffs.size());
    for (std::size_t g = 0; g < cutoffs.size(); ++g) {
        const AggregateRates a = acc[g].mean();
        out[g] = {cutoffs[g], a.fpr, a.tpr};
    }
    return out;
}

} // namespace mtcal
