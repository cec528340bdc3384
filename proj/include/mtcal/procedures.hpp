#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mtcal/error.hpp"
#include "mtcal/inject.hpp"
#include "mtcal/panel.hpp"
#include "mtcal/resample.hpp"

namespace mtcal {

enum class PValueSource { normal_one_sided, normal_two_sided, student_t };

inline const char* to_string(PValueSource s) noexcept
{
    switch (s) {
    case PValueSource::normal_one_sided: return "normal_one_sided";
    case PValueSource::normal_two_sided: return "normal_two_sided";
    case PValueSource::student_t: return "student_t";
    }
    return "unknown";
}

struct PValueVector {
    std::vector<double> p;
    PValueSource source = PValueSource::normal_one_sided;

    void validate() const
    {
        if (p.empty())
            fail(ErrorKind::EmptyInput, "p-value vector is empty");
        for (double v : p) {
            if (!(v >= 0.0 && v <= 1.0))
                fail(ErrorKind::OutOfRange, "p-value outside [0, 1]");
        }
    }
};

/// Right-tail normal p-value. An undefined statistic maps to p = 1.
inline double normal_p_one_sided(double t) noexcept
{
    return std::isnan(t) ? 1.0 : 0.5 * std::erfc(t / std::sqrt(2.0));
}

inline double normal_p_two_sided(double t) noexcept
{
    return std::isnan(t) ? 1.0 : std::erfc(std::abs(t) / std::sqrt(2.0));
}

/// One-sided right-tail Student-t p-value with `dof` degrees of freedom.
inline double student_p_one_sided(double t, double dof)
{
    if (std::isnan(t))
        return 1.0;
    if (!(dof > 0.0))
        fail(ErrorKind::InvalidArgument, "Student-t p-values need positive degrees of freedom");
    if (std::isinf(t))
        return t > 0 ? 0.0 : 1.0;
    const boost::math::students_t dist(dof);
    return boost::math::cdf(boost::math::complement(dist, t));
}

inline PValueVector p_values_from_t(std::span<const double> t, PValueSource source = PValueSource::normal_one_sided,
                                    std::span<const double> dof = {})
{
    PValueVector out;
    out.source = source;
    out.p.resize(t.size());
    if (source == PValueSource::student_t && dof.size() != t.size())
        fail(ErrorKind::LengthMismatch, "Student-t p-values need one degrees-of-freedom entry per statistic");
    for (std::size_t i = 0; i < t.size(); ++i) {
        switch (source) {
        case PValueSource::normal_one_sided: out.p[i] = normal_p_one_sided(t[i]); break;
        case PValueSource::normal_two_sided: out.p[i] = normal_p_two_sided(t[i]); break;
        case PValueSource::student_t: out.p[i] = student_p_one_sided(t[i], dof[i]); break;
        }
    }
    return out;
}

/// How `RejectionSet::threshold` is to be read.
enum class ThresholdKind {
    t_cutoff,        // reject where t (or |t|) > threshold
    p_value,         // reject where p <= threshold; -1 when nothing is rejected
    t_min_rejected,  // smallest rejected statistic; +inf when nothing is rejected
};

struct RejectionSet {
    std::vector<std::uint8_t> reject;
    double threshold = 0.0;
    ThresholdKind kind = ThresholdKind::p_value;
    std::string procedure_tag;

    [[nodiscard]] std::size_t count() const
    {
        return static_cast<std::size_t>(std::count(reject.begin(), reject.end(), std::uint8_t{1}));
    }
};

inline RejectionSet fixed_cutoff(std::span<const double> t, double t_cut, Sidedness sidedness)
{
    RejectionSet out;
    out.reject.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = sidedness == Sidedness::one_sided_right ? t[i] : std::abs(t[i]);
        out.reject[i] = v > t_cut ? 1 : 0;
    }
    out.threshold = t_cut;
    out.kind = ThresholdKind::t_cutoff;
    out.procedure_tag = "fixed_cutoff";
    return out;
}

/// p-values sorted once so several step-up rules can share the ordering.
class SortedPValues {
public:
    explicit SortedPValues(std::span<const double> p) : p_(p.begin(), p.end()), order_(p.size())
    {
        if (p.empty())
            fail(ErrorKind::EmptyInput, "p-value vector is empty");
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
            return p_[a] != p_[b] ? p_[a] < p_[b] : a < b;
        });
        sorted_.resize(p.size());
        for (std::size_t k = 0; k < p.size(); ++k)
            sorted_[k] = p_[order_[k]];
    }

    [[nodiscard]] std::size_t size() const noexcept { return p_.size(); }
    [[nodiscard]] const std::vector<std::size_t>& order() const noexcept { return order_; }
    [[nodiscard]] const std::vector<double>& sorted() const noexcept { return sorted_; }
    [[nodiscard]] const std::vector<double>& values() const noexcept { return p_; }

    /// Largest k with p_(k) <= k * level / N (0 if none). Rejecting the first k in sorted order
    /// is the same as rejecting every p <= p_(k).
    [[nodiscard]] std::size_t step_up_count(double level) const noexcept
    {
        const double n = static_cast<double>(sorted_.size());
        for (std::size_t k = sorted_.size(); k >= 1; --k) {
            if (sorted_[k - 1] <= static_cast<double>(k) * level / n)
                return k;
        }
        return 0;
    }

    /// #{p > theta}
    [[nodiscard]] std::size_t count_above(double theta) const noexcept
    {
        return static_cast<std::size_t>(sorted_.end() - std::upper_bound(sorted_.begin(), sorted_.end(), theta));
    }

    [[nodiscard]] RejectionSet rejection(std::size_t k, std::string tag) const
    {
        RejectionSet out;
        out.reject.assign(size(), 0);
        for (std::size_t r = 0; r < k; ++r)
            out.reject[order_[r]] = 1;
        out.threshold = k > 0 ? sorted_[k - 1] : -1.0;
        out.kind = ThresholdKind::p_value;
        out.procedure_tag = std::move(tag);
        return out;
    }

private:
    std::vector<double> p_;
    std::vector<std::size_t> order_;
    std::vector<double> sorted_;
};

inline double harmonic_number(std::size_t n) noexcept
{
    double s = 0.0;
    for (std::size_t i = 1; i <= n; ++i)
        s += 1.0 / static_cast<double>(i);
    return s;
}

/// Clamped to [1/N, 1].
inline double storey_pi0(const SortedPValues& p, double theta)
{
    if (!(theta > 0.0 && theta < 1.0))
        fail(ErrorKind::InvalidArgument, "Storey theta must lie in (0, 1)");
    const double n = static_cast<double>(p.size());
    const double raw = static_cast<double>(p.count_above(theta)) / (n * (1.0 - theta));
    return std::clamp(raw, 1.0 / n, 1.0);
}

namespace detail {

inline void check_level(double alpha)
{
    if (!(alpha > 0.0 && alpha < 1.0))
        fail(ErrorKind::InvalidArgument, "significance level must lie in (0, 1)");
}

} // namespace detail

inline std::size_t bh_count(const SortedPValues& p, double alpha) { return p.step_up_count(alpha); }

inline std::size_t by_count(const SortedPValues& p, double alpha)
{
    return p.step_up_count(alpha / harmonic_number(p.size()));
}

inline std::size_t storey_count(const SortedPValues& p, double alpha, double theta)
{
    return p.step_up_count(alpha / storey_pi0(p, theta));
}

inline RejectionSet bh(const PValueVector& p, double alpha)
{
    p.validate();
    detail::check_level(alpha);
    const SortedPValues s(p.p);
    return s.rejection(bh_count(s, alpha), "bh");
}

inline RejectionSet by(const PValueVector& p, double alpha)
{
    p.validate();
    detail::check_level(alpha);
    const SortedPValues s(p.p);
    return s.rejection(by_count(s, alpha), "by");
}

inline RejectionSet storey(const PValueVector& p, double alpha, double theta)
{
    p.validate();
    detail::check_level(alpha);
    const SortedPValues s(p.p);
    return s.rejection(storey_count(s, alpha, theta), "storey");
}

// ---------------------------------------------------------------------------------------------
// Romano-Shaikh-Wolf bootstrap FDR control (step-down with recursively computed critical values).
// ---------------------------------------------------------------------------------------------

inline constexpr const char* kRswTag = "rsw2008_fdr_stepdown";

/// Step-down FDR procedure on studentized statistics.
///
/// `observed` holds N test statistics (larger = more significant). `boot` is a B x N row-major
/// matrix of bootstrap statistics centred at the observed effects. Critical values c_1..c_N are
/// built recursively: c_j treats the j least significant hypotheses as true nulls and the rest
/// as rejected, and is the smallest c whose bootstrap FDR estimate is at most alpha. Hypotheses
/// are then tested from the most significant down, rejecting while T > c.
inline RejectionSet rsw_stepdown(std::span<const double> observed, std::span<const double> boot, std::size_t B,
                                 double alpha)
{
    detail::check_level(alpha);
    const std::size_t s = observed.size();
    if (s == 0)
        fail(ErrorKind::EmptyInput, "rsw: no hypotheses");
    if (B == 0 || boot.size() != B * s)
        fail(ErrorKind::LengthMismatch, "rsw: bootstrap matrix must be B x N");
    constexpr double ninf = -std::numeric_limits<double>::infinity();
    auto clean = [](double v) { return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v; };

    // ascending significance; ties broken by index
    std::vector<std::size_t> order(s);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ta = clean(observed[a]);
        const double tb = clean(observed[b]);
        return ta != tb ? ta < tb : a > b;
    });

    std::vector<double> crit(s + 1, ninf);           // crit[j], 1-based
    std::vector<double> sorted(B * s);               // per draw, ascending null statistics
    std::vector<double> top(B);
    std::vector<double> g(B);
    std::vector<std::size_t> idx(B);
    for (std::size_t j = 1; j <= s; ++j) {
        const std::size_t col = order[j - 1];
        for (std::size_t b = 0; b < B; ++b) {
            double* row = sorted.data() + b * s;
            const double v = clean(boot[b * s + col]);
            std::size_t pos = j - 1;
            while (pos > 0 && row[pos - 1] > v) {
                row[pos] = row[pos - 1];
                --pos;
            }
            row[pos] = v;
            // row[0..j) ascending; row[j-1] is the largest null statistic
            std::size_t k = 0;
            for (std::size_t r = j - 1; r >= 1; --r) {
                if (row[r - 1] > crit[r])
                    ++k;
                else
                    break;
            }
            top[b] = row[j - 1];
            g[b] = static_cast<double>(1 + k) / static_cast<double>(s - j + 1 + k);
        }
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return top[a] != top[b] ? top[a] > top[b] : a < b;
        });
        // FDR(c) sums g over draws with top > c; walk thresholds from high to low
        const double budget = alpha * static_cast<double>(B);
        double cum = 0.0;
        std::size_t m = 0;
        double c = ninf;
        while (m < B) {
            std::size_t e = m;
            double add = 0.0;
            while (e < B && top[idx[e]] == top[idx[m]]) {
                add += g[idx[e]];
                ++e;
            }
            if (cum + add > budget) {
                c = top[idx[m]];
                break;
            }
            cum += add;
            m = e;
        }
        crit[j] = c;
    }

    RejectionSet out;
    out.reject.assign(s, 0);
    out.kind = ThresholdKind::t_min_rejected;
    out.threshold = std::numeric_limits<double>::infinity();
    out.procedure_tag = kRswTag;
    for (std::size_t j = s; j >= 1; --j) {
        const std::size_t col = order[j - 1];
        const double t = clean(observed[col]);
        if (!(t > crit[j]))
            break;
        out.reject[col] = 1;
        out.threshold = t;
    }
    return out;
}

struct RswOptions {
    std::size_t B = 1000;
    std::uint64_t seed = 0;
    Sidedness sidedness = Sidedness::one_sided_right;
    std::size_t subsample_size = 500;
    std::size_t subsample_count = 100;
    /// Upper bound on B * s^2 summed over subsets.
    double max_cost = 5e11;

    void validate() const
    {
        if (B < 100)
            fail(ErrorKind::InsufficientIterations, "rsw needs B >= 100, got " + std::to_string(B));
        if (subsample_size == 0 || subsample_count == 0)
            fail(ErrorKind::InvalidArgument, "rsw subsample size and count must be positive");
    }
};

/// Observed statistics of the panel reached by `base` weights, plus the centred bootstrap matrix.
/// Bootstrap draw b resamples the rows of that panel with seed (seed, rsw, b).
struct RswStatistics {
    std::vector<double> observed;
    std::vector<double> boot;  // B x N
    std::size_t B = 0;
};

/// `shift` is added to every column's effect (for pseudo-samples built without materializing);
/// it cancels in the centred bootstrap statistics.
inline RswStatistics rsw_statistics(const EffectEstimator& estimator, std::span<const double> shift,
                                    const IndexDraw& base, const RswOptions& opts)
{
    const std::size_t n = estimator.panel().strategies();
    const std::size_t d = estimator.panel().periods();
    const bool two = opts.sidedness == Sidedness::two_sided;
    RswStatistics out;
    out.B = opts.B;
    std::vector<EffectEstimate> est(n);
    estimator.estimate(multiplicities(base, d), est);
    std::vector<double> centre(n);
    out.observed.resize(n);
    for (std::size_t c = 0; c < n; ++c) {
        const double sh = shift.empty() ? 0.0 : shift[c];
        centre[c] = est[c].effect;
        const double t = est[c].ok() ? (est[c].effect + sh) / est[c].se : std::numeric_limits<double>::quiet_NaN();
        out.observed[c] = two ? std::abs(t) : t;
    }
    out.boot.resize(opts.B * n);
    for (std::size_t b = 0; b < opts.B; ++b) {
        const IndexDraw draw = compose(base, draw_indices(derive_seed(opts.seed, Stage::rsw, b), d));
        estimator.estimate(multiplicities(draw, d), est);
        for (std::size_t c = 0; c < n; ++c) {
            double t = std::numeric_limits<double>::quiet_NaN();
            if (est[c].ok() && !std::isnan(centre[c]))
                t = (est[c].effect - centre[c]) / est[c].se;
            out.boot[b * n + c] = two ? std::abs(t) : t;
        }
    }
    return out;
}

/// One subset of columns tested by RSW and its rejection set (indices into the subset).
struct RswSubset {
    std::vector<std::size_t> columns;
    RejectionSet result;
};

/// Column subsets RSW works on: the whole panel when N <= subsample_size, otherwise
/// subsample_count random subsets of subsample_size columns.
inline std::vector<std::vector<std::size_t>> rsw_subsets(std::size_t n, const RswOptions& opts)
{
    std::vector<std::vector<std::size_t>> out;
    if (n <= opts.subsample_size) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        out.push_back(std::move(all));
    } else {
        for (std::size_t m = 0; m < opts.subsample_count; ++m) {
            Engine eng(derive_seed(opts.seed, Stage::subsample, m));
            out.push_back(sample_without_replacement(eng, n, opts.subsample_size));
        }
    }
    const double s = static_cast<double>(out.front().size());
    const double cost = static_cast<double>(opts.B) * s * s * static_cast<double>(out.size());
    if (cost > opts.max_cost)
        fail(ErrorKind::BudgetExceeded, "rsw cost B*s^2*subsets = " + std::to_string(cost) + " exceeds the budget");
    return out;
}

/// Runs RSW at each level in `alphas` on pre-computed statistics, subset by subset.
inline std::vector<std::vector<RswSubset>> rsw_from_statistics(const RswStatistics& stats,
                                                               std::span<const std::vector<std::size_t>> subsets,
                                                               std::span<const double> alphas)
{
    const std::size_t n = stats.observed.size();
    std::vector<std::vector<RswSubset>> out(alphas.size());
    for (const auto& cols : subsets) {
        const std::size_t s = cols.size();
        std::vector<double> obs(s);
        std::vector<double> boot(stats.B * s);
        for (std::size_t a = 0; a < s; ++a) {
            obs[a] = stats.observed[cols[a]];
            for (std::size_t b = 0; b < stats.B; ++b)
                boot[b * s + a] = stats.boot[b * n + cols[a]];
        }
        for (std::size_t l = 0; l < alphas.size(); ++l)
            out[l].push_back({cols, rsw_stepdown(obs, boot, stats.B, alphas[l])});
    }
    return out;
}

/// RSW on a panel (raw or pseudo-sample) at level alpha.
inline std::vector<RswSubset> rsw(const ReturnPanel& panel, const FactorPanel* factors, EffectMode mode, double alpha,
                                  const RswOptions& opts, std::size_t min_obs = kDefaultMinObs)
{
    opts.validate();
    const EffectEstimator estimator(panel, factors, mode, min_obs);
    const auto subsets = rsw_subsets(panel.strategies(), opts);
    const RswStatistics stats = rsw_statistics(estimator, {}, IndexDraw::identity(panel.periods()), opts);
    const double alphas[] = {alpha};
    return std::move(rsw_from_statistics(stats, subsets, alphas).front());
}

} // namespace mtcal
