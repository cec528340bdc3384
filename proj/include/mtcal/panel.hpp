#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "mtcal/error.hpp"

namespace mtcal {

/// Whether a strategy's effect is its raw mean return or its factor-model intercept.
enum class EffectMode { raw_mean, factor_alpha };

inline constexpr std::size_t kDefaultMinObs = 8;
/// Upper bound on benchmark factors; keeps the regression workspaces on the stack.
inline constexpr std::size_t kMaxFactors = 16;

inline const char* to_string(EffectMode mode) noexcept
{
    return mode == EffectMode::raw_mean ? "raw_mean" : "factor_alpha";
}

namespace detail {

inline bool parse_double(const std::string& text, double& out)
{
    if (text.empty())
        return false;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (*first == '+')
        ++first;
    auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last;
}

} // namespace detail

/// Orders period labels numerically when both parse as numbers, lexicographically otherwise
/// (ISO dates such as "1999-12" sort correctly either way).
inline bool period_label_less(const std::string& a, const std::string& b)
{
    double x = 0.0;
    double y = 0.0;
    if (detail::parse_double(a, x) && detail::parse_double(b, y))
        return x < y;
    return a < b;
}

/// D x N panel of per-period simple returns with an observation mask.
///
/// Storage is column-major so every strategy's history is contiguous. Masked-out cells are
/// stored as 0.0 but no statistic ever reads them.
class ReturnPanel {
public:
    ReturnPanel() = default;

    ReturnPanel(std::vector<std::string> period_labels, std::vector<std::string> names,
                std::vector<double> values, std::vector<std::uint8_t> mask)
        : labels_(std::move(period_labels)), names_(std::move(names)), values_(std::move(values)),
          mask_(std::move(mask))
    {
        const std::size_t d = labels_.size();
        const std::size_t n = names_.size();
        if (d < 2)
            fail(ErrorKind::InvalidArgument, "a return panel needs at least 2 periods");
        if (n < 1)
            fail(ErrorKind::InvalidArgument, "a return panel needs at least 1 strategy");
        if (values_.size() != d * n || mask_.size() != d * n)
            fail(ErrorKind::LengthMismatch, "panel storage does not match D x N");
        for (std::size_t r = 1; r < d; ++r) {
            if (!period_label_less(labels_[r - 1], labels_[r]))
                fail(ErrorKind::InvalidArgument,
                     "period labels must be strictly increasing at '" + labels_[r] + "'");
        }
        std::unordered_set<std::string> seen;
        for (const auto& name : names_) {
            if (!seen.insert(name).second)
                fail(ErrorKind::DuplicateIdentifier, "duplicate strategy name '" + name + "'");
        }
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!mask_[i]) {
                values_[i] = 0.0;
            } else if (!std::isfinite(values_[i])) {
                fail(ErrorKind::InvalidArgument, "non-finite observed return for '" + names_[i / d] +
                                                     "' at period '" + labels_[i % d] + "'");
            }
        }
    }

    [[nodiscard]] std::size_t periods() const noexcept { return labels_.size(); }
    [[nodiscard]] std::size_t strategies() const noexcept { return names_.size(); }
    [[nodiscard]] const std::vector<std::string>& period_labels() const noexcept { return labels_; }
    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }

    [[nodiscard]] std::span<const double> column(std::size_t c) const
    {
        return {values_.data() + c * periods(), periods()};
    }
    [[nodiscard]] std::span<const std::uint8_t> column_mask(std::size_t c) const
    {
        return {mask_.data() + c * periods(), periods()};
    }
    [[nodiscard]] std::span<double> column_mut(std::size_t c)
    {
        return {values_.data() + c * periods(), periods()};
    }

    [[nodiscard]] double at(std::size_t r, std::size_t c) const { return values_[c * periods() + r]; }
    [[nodiscard]] bool observed(std::size_t r, std::size_t c) const { return mask_[c * periods() + r] != 0; }

    [[nodiscard]] std::size_t observed_count(std::size_t c) const
    {
        const auto m = column_mask(c);
        return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; }));
    }

    [[nodiscard]] bool column_complete(std::size_t c) const { return observed_count(c) == periods(); }

    /// Loader-level invariant: every strategy has at least one observation.
    void require_observed_columns() const
    {
        for (std::size_t c = 0; c < strategies(); ++c) {
            if (observed_count(c) == 0)
                fail(ErrorKind::InvalidArgument, "strategy '" + names_[c] + "' has no observed returns");
        }
    }

    [[nodiscard]] ReturnPanel select_columns(std::span<const std::size_t> cols) const
    {
        std::vector<std::string> names;
        std::vector<double> values;
        std::vector<std::uint8_t> mask;
        names.reserve(cols.size());
        values.reserve(cols.size() * periods());
        mask.reserve(cols.size() * periods());
        for (std::size_t c : cols) {
            if (c >= strategies())
                fail(ErrorKind::OutOfRange, "column index out of range");
            names.push_back(names_[c]);
            values.insert(values.end(), column(c).begin(), column(c).end());
            mask.insert(mask.end(), column_mask(c).begin(), column_mask(c).end());
        }
        return ReturnPanel(labels_, std::move(names), std::move(values), std::move(mask));
    }

    [[nodiscard]] const std::vector<double>& raw_values() const noexcept { return values_; }
    [[nodiscard]] const std::vector<std::uint8_t>& raw_mask() const noexcept { return mask_; }

    bool operator==(const ReturnPanel&) const = default;

private:
    std::vector<std::string> labels_;
    std::vector<std::string> names_;
    std::vector<double> values_;
    std::vector<std::uint8_t> mask_;
};

/// D x K benchmark factor returns, row-major, aligned period-by-period with a ReturnPanel.
class FactorPanel {
public:
    FactorPanel() = default;

    FactorPanel(std::vector<std::string> period_labels, std::vector<std::string> factor_names,
                std::vector<double> row_major_values)
        : labels_(std::move(period_labels)), names_(std::move(factor_names)), values_(std::move(row_major_values))
    {
        if (names_.empty())
            fail(ErrorKind::InvalidArgument, "a factor panel needs at least one factor");
        if (names_.size() > kMaxFactors)
            fail(ErrorKind::InvalidArgument, "at most " + std::to_string(kMaxFactors) + " factors are supported");
        if (values_.size() != labels_.size() * names_.size())
            fail(ErrorKind::LengthMismatch, "factor storage does not match D x K");
        for (double v : values_) {
            if (!std::isfinite(v))
                fail(ErrorKind::InvalidArgument, "factor panels may not contain missing or non-finite values");
        }
    }

    [[nodiscard]] std::size_t periods() const noexcept { return labels_.size(); }
    [[nodiscard]] std::size_t factors() const noexcept { return names_.size(); }
    [[nodiscard]] const std::vector<std::string>& period_labels() const noexcept { return labels_; }
    [[nodiscard]] const std::vector<std::string>& names() const noexcept { return names_; }
    [[nodiscard]] std::span<const double> row(std::size_t r) const
    {
        return {values_.data() + r * factors(), factors()};
    }
    [[nodiscard]] double at(std::size_t r, std::size_t k) const { return values_[r * factors() + k]; }
    [[nodiscard]] const std::vector<double>& raw_values() const noexcept { return values_; }

    void require_aligned(const ReturnPanel& panel) const
    {
        if (periods() != panel.periods())
            fail(ErrorKind::LengthMismatch, "factor panel length differs from the return panel");
        if (labels_ != panel.period_labels())
            fail(ErrorKind::InvalidArgument, "factor period labels are not aligned with the return panel");
    }

    bool operator==(const FactorPanel&) const = default;

private:
    std::vector<std::string> labels_;
    std::vector<std::string> names_;
    std::vector<double> values_;
};

/// Per-strategy summary. `alpha`/`t_alpha`/`residuals` are set only by factor regressions;
/// residuals are NaN on periods the strategy was not observed.
struct StrategyStat {
    double mean = 0.0;
    double t_stat = 0.0;
    std::size_t n_obs = 0;
    std::optional<double> alpha;
    std::optional<double> t_alpha;
    std::optional<std::vector<double>> residuals;
};

// ---------------------------------------------------------------------------------------------
// Weighted estimation kernels. Weights are row multiplicities (all ones for the in-sample fit,
// bootstrap counts otherwise); every resampled statistic in the library goes through these.
// ---------------------------------------------------------------------------------------------

enum class EstimateStatus : std::uint8_t { ok, too_few_observations, degenerate_variance, rank_deficient };

inline ErrorKind to_error_kind(EstimateStatus status) noexcept
{
    switch (status) {
    case EstimateStatus::too_few_observations: return ErrorKind::TooFewObservations;
    case EstimateStatus::degenerate_variance: return ErrorKind::DegenerateVariance;
    case EstimateStatus::rank_deficient: return ErrorKind::RankDeficient;
    case EstimateStatus::ok: break;
    }
    return ErrorKind::InvalidArgument;
}

/// Effect (mean or intercept) with its standard error. Adding a constant to every observed
/// return moves `effect` one-for-one and leaves `se` unchanged.
struct EffectEstimate {
    double effect = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
    double n = 0.0;
    EstimateStatus status = EstimateStatus::too_few_observations;

    [[nodiscard]] bool ok() const noexcept { return status == EstimateStatus::ok; }
    [[nodiscard]] double t() const noexcept
    {
        return ok() ? effect / se : std::numeric_limits<double>::quiet_NaN();
    }
};

using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxFactors, kMaxFactors>;
using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxFactors, 1>;

namespace detail {

inline bool degenerate_spread(double sum_sq, double n, double mean)
{
    if (!(sum_sq > 0.0))
        return true;
    const double sd = std::sqrt(sum_sq / (n - 1.0));
    return sd <= 1e-14 * std::abs(mean);
}

/// Weighted sums of factor rows over the periods a column uses.
struct FactorSums {
    double n = 0.0;
    SmallVec sum;
    SmallMat cross;

    explicit FactorSums(std::size_t k) : sum(SmallVec::Zero(static_cast<Eigen::Index>(k))),
                                         cross(SmallMat::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)))
    {
    }

    void add(std::span<const double> f, double w)
    {
        n += w;
        const auto k = static_cast<Eigen::Index>(f.size());
        for (Eigen::Index a = 0; a < k; ++a) {
            const double wa = w * f[static_cast<std::size_t>(a)];
            sum(a) += wa;
            for (Eigen::Index b = 0; b <= a; ++b)
                cross(a, b) += wa * f[static_cast<std::size_t>(b)];
        }
    }
};

/// Centred normal-equation solver for intercept + factors. Factors identically zero over the
/// used periods are dropped (their slope is fixed at 0); any other collinearity is rank deficiency.
struct RegressionDesign {
    EstimateStatus status = EstimateStatus::ok;
    std::size_t k_total = 0;
    std::vector<int> kept;
    double n = 0.0;
    SmallVec mean;       // means of kept factors
    SmallVec inv_scale;  // 1 / sqrt(centred variance sum) per kept factor
    Eigen::LDLT<SmallMat> ldlt;  // of the correlation-scaled centred cross-product
    double mean_quad = 0.0;      // mean' S^{-1} mean

    RegressionDesign() = default;

    explicit RegressionDesign(const FactorSums& sums) : k_total(static_cast<std::size_t>(sums.sum.size())), n(sums.n)
    {
        const auto k = static_cast<Eigen::Index>(k_total);
        for (Eigen::Index a = 0; a < k; ++a) {
            if (sums.cross(a, a) > 0.0)
                kept.push_back(static_cast<int>(a));
        }
        const auto ke = static_cast<Eigen::Index>(kept.size());
        mean.resize(ke);
        inv_scale.resize(ke);
        if (ke == 0)
            return;
        if (n <= 0.0) {
            status = EstimateStatus::too_few_observations;
            return;
        }
        SmallMat s(ke, ke);
        for (Eigen::Index a = 0; a < ke; ++a)
            mean(a) = sums.sum(kept[static_cast<std::size_t>(a)]) / n;
        for (Eigen::Index a = 0; a < ke; ++a) {
            for (Eigen::Index b = 0; b <= a; ++b) {
                const int ia = kept[static_cast<std::size_t>(a)];
                const int ib = kept[static_cast<std::size_t>(b)];
                const double raw = ia >= ib ? sums.cross(ia, ib) : sums.cross(ib, ia);
                s(a, b) = raw - n * mean(a) * mean(b);
                s(b, a) = s(a, b);
            }
        }
        for (Eigen::Index a = 0; a < ke; ++a) {
            const double raw = sums.cross(kept[static_cast<std::size_t>(a)], kept[static_cast<std::size_t>(a)]);
            if (!(s(a, a) > 1e-12 * raw)) {
                status = EstimateStatus::rank_deficient;
                return;
            }
            inv_scale(a) = 1.0 / std::sqrt(s(a, a));
        }
        const SmallMat corr = inv_scale.asDiagonal() * s * inv_scale.asDiagonal();
        ldlt.compute(corr);
        const auto pivots = ldlt.vectorD();
        const double max_pivot = pivots.cwiseAbs().maxCoeff();
        if (ldlt.info() != Eigen::Success || !(pivots.minCoeff() > 1e-10 * max_pivot)) {
            status = EstimateStatus::rank_deficient;
            return;
        }
        const SmallVec scaled_mean = inv_scale.cwiseProduct(mean);
        mean_quad = scaled_mean.dot(ldlt.solve(scaled_mean));
    }

    /// Slopes for the kept factors given the centred cross-products with y (length k_total).
    [[nodiscard]] SmallVec slopes(const SmallVec& s_fy) const
    {
        const auto ke = static_cast<Eigen::Index>(kept.size());
        SmallVec rhs(ke);
        for (Eigen::Index a = 0; a < ke; ++a)
            rhs(a) = s_fy(kept[static_cast<std::size_t>(a)]) * inv_scale(a);
        SmallVec b = ldlt.solve(rhs);
        return inv_scale.cwiseProduct(b);
    }

    [[nodiscard]] std::size_t parameters() const noexcept { return 1 + kept.size(); }
};

struct RegressionFit {
    EffectEstimate estimate;
    SmallVec slopes;  // kept factors only
};

/// Second pass of the regression: uses the design plus y's weighted mean over the same rows.
inline RegressionFit finish_regression(const RegressionDesign& design, std::span<const double> y,
                                       std::span<const std::uint8_t> mask, std::span<const std::uint32_t> w,
                                       const FactorPanel& factors, double sum_y, std::size_t min_obs)
{
    RegressionFit fit;
    EffectEstimate& est = fit.estimate;
    est.n = design.n;
    const double needed = static_cast<double>(std::max(min_obs, design.parameters() + 1));
    if (design.n < needed) {
        est.status = EstimateStatus::too_few_observations;
        return fit;
    }
    if (design.status != EstimateStatus::ok) {
        est.status = design.status;
        return fit;
    }
    const double ybar = sum_y / design.n;
    const std::size_t k = design.k_total;
    SmallVec s_fy = SmallVec::Zero(static_cast<Eigen::Index>(k));
    double s_yy = 0.0;
    for (std::size_t r = 0; r < y.size(); ++r) {
        if (!mask[r] || w[r] == 0)
            continue;
        const double wd = static_cast<double>(w[r]) * (y[r] - ybar);
        s_yy += wd * (y[r] - ybar);
        const auto f = factors.row(r);
        for (std::size_t a = 0; a < k; ++a)
            s_fy(static_cast<Eigen::Index>(a)) += wd * f[a];
    }
    double alpha = ybar;
    double ssr = s_yy;
    if (!design.kept.empty()) {
        fit.slopes = design.slopes(s_fy);
        for (std::size_t a = 0; a < design.kept.size(); ++a) {
            const auto ia = static_cast<Eigen::Index>(a);
            alpha -= fit.slopes(ia) * design.mean(ia);
            ssr -= fit.slopes(ia) * s_fy(design.kept[a]);
        }
    }
    if (!(ssr > 1e-24 * std::max(s_yy, 1e-300)))
        ssr = 0.0;
    const double dof = design.n - static_cast<double>(design.parameters());
    const double sigma2 = ssr / dof;
    est.effect = alpha;
    est.se = std::sqrt(sigma2 * (1.0 / design.n + design.mean_quad));
    est.status = est.se > 0.0 ? EstimateStatus::ok : EstimateStatus::degenerate_variance;
    return fit;
}

} // namespace detail

/// Weighted sample mean with its (n-1)-denominator standard error.
inline EffectEstimate weighted_mean_estimate(std::span<const double> y, std::span<const std::uint8_t> mask,
                                             std::span<const std::uint32_t> w, std::size_t min_obs)
{
    EffectEstimate est;
    double n = 0.0;
    double sum = 0.0;
    for (std::size_t r = 0; r < y.size(); ++r) {
        if (mask[r] && w[r]) {
            n += w[r];
            sum += w[r] * y[r];
        }
    }
    est.n = n;
    if (n < static_cast<double>(std::max<std::size_t>(min_obs, 2))) {
        est.status = EstimateStatus::too_few_observations;
        return est;
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < y.size(); ++r) {
        if (mask[r] && w[r]) {
            const double d = y[r] - mean;
            ss += w[r] * d * d;
        }
    }
    est.effect = mean;
    if (detail::degenerate_spread(ss, n, mean)) {
        est.status = EstimateStatus::degenerate_variance;
        return est;
    }
    est.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    est.status = EstimateStatus::ok;
    return est;
}

/// Weighted least-squares intercept of y on [1, factors] with a homoskedastic standard error.
inline EffectEstimate weighted_alpha_estimate(std::span<const double> y, std::span<const std::uint8_t> mask,
                                              std::span<const std::uint32_t> w, const FactorPanel& factors,
                                              std::size_t min_obs)
{
    detail::FactorSums sums(factors.factors());
    double sum_y = 0.0;
    for (std::size_t r = 0; r < y.size(); ++r) {
        if (mask[r] && w[r]) {
            sums.add(factors.row(r), static_cast<double>(w[r]));
            sum_y += w[r] * y[r];
        }
    }
    const detail::RegressionDesign design(sums);
    return detail::finish_regression(design, y, mask, w, factors, sum_y, min_obs).estimate;
}

/// Estimates the effect of every column of a panel under arbitrary row multiplicities.
///
/// Holds references to the panel and factors, which must outlive it. In factor mode the
/// regression design for fully observed columns is computed once per weight vector.
class EffectEstimator {
public:
    EffectEstimator(const ReturnPanel& panel, const FactorPanel* factors, EffectMode mode,
                    std::size_t min_obs = kDefaultMinObs)
        : panel_(&panel), factors_(factors), mode_(mode), min_obs_(min_obs)
    {
        if (mode_ == EffectMode::factor_alpha) {
            if (factors_ == nullptr)
                fail(ErrorKind::InvalidArgument, "factor_alpha mode requires a factor panel");
            factors_->require_aligned(panel);
        }
        complete_.resize(panel.strategies());
        for (std::size_t c = 0; c < panel.strategies(); ++c)
            complete_[c] = panel.column_complete(c) ? 1 : 0;
    }

    [[nodiscard]] const ReturnPanel& panel() const noexcept { return *panel_; }
    [[nodiscard]] EffectMode mode() const noexcept { return mode_; }
    [[nodiscard]] std::size_t min_obs() const noexcept { return min_obs_; }

    void estimate(std::span<const std::uint32_t> w, std::span<EffectEstimate> out) const
    {
        const ReturnPanel& p = *panel_;
        if (w.size() != p.periods() || out.size() != p.strategies())
            fail(ErrorKind::LengthMismatch, "estimate: weight or output length mismatch");
        if (mode_ == EffectMode::raw_mean) {
            for (std::size_t c = 0; c < p.strategies(); ++c)
                out[c] = weighted_mean_estimate(p.column(c), p.column_mask(c), w, min_obs_);
            return;
        }
        const FactorPanel& f = *factors_;
        std::optional<detail::RegressionDesign> shared;
        for (std::size_t c = 0; c < p.strategies(); ++c) {
            const auto y = p.column(c);
            const auto m = p.column_mask(c);
            if (!complete_[c]) {
                out[c] = weighted_alpha_estimate(y, m, w, f, min_obs_);
                continue;
            }
            if (!shared) {
                detail::FactorSums sums(f.factors());
                for (std::size_t r = 0; r < w.size(); ++r) {
                    if (w[r])
                        sums.add(f.row(r), static_cast<double>(w[r]));
                }
                shared.emplace(sums);
            }
            double sum_y = 0.0;
            for (std::size_t r = 0; r < w.size(); ++r)
                sum_y += w[r] * y[r];
            out[c] = detail::finish_regression(*shared, y, m, w, f, sum_y, min_obs_).estimate;
        }
    }

    [[nodiscard]] std::vector<EffectEstimate> estimate(std::span<const std::uint32_t> w) const
    {
        std::vector<EffectEstimate> out(panel_->strategies());
        estimate(w, out);
        return out;
    }

    [[nodiscard]] std::vector<EffectEstimate> in_sample() const
    {
        const std::vector<std::uint32_t> ones(panel_->periods(), 1);
        return estimate(ones);
    }

private:
    const ReturnPanel* panel_;
    const FactorPanel* factors_;
    EffectMode mode_;
    std::size_t min_obs_;
    std::vector<std::uint8_t> complete_;
};

// ---------------------------------------------------------------------------------------------
// Public per-strategy statistics (in-sample, throwing).
// ---------------------------------------------------------------------------------------------

inline StrategyStat t_stat_mean(std::span<const double> values, std::span<const std::uint8_t> mask,
                                std::size_t min_obs = kDefaultMinObs)
{
    if (values.size() != mask.size())
        fail(ErrorKind::LengthMismatch, "t_stat_mean: values and mask differ in length");
    const std::vector<std::uint32_t> ones(values.size(), 1);
    const EffectEstimate est = weighted_mean_estimate(values, mask, ones, min_obs);
    if (!est.ok())
        fail(to_error_kind(est.status), "t_stat_mean: " + std::to_string(static_cast<long>(est.n)) +
                                            " observations (min_obs " + std::to_string(min_obs) + ")");
    StrategyStat s;
    s.mean = est.effect;
    s.t_stat = est.t();
    s.n_obs = static_cast<std::size_t>(est.n);
    return s;
}

/// Factor-model intercept over periods where the strategy is observed. The raw mean fields are
/// filled as well (t_stat is NaN when the raw series has zero spread). t_alpha is NaN for an
/// exact fit.
inline StrategyStat alpha_regression(std::span<const double> values, std::span<const std::uint8_t> mask,
                                     const FactorPanel& factors, std::size_t min_obs = kDefaultMinObs)
{
    if (values.size() != mask.size() || values.size() != factors.periods())
        fail(ErrorKind::LengthMismatch, "alpha_regression: series and factors differ in length");
    const std::vector<std::uint32_t> ones(values.size(), 1);
    detail::FactorSums sums(factors.factors());
    double sum_y = 0.0;
    for (std::size_t r = 0; r < values.size(); ++r) {
        if (mask[r]) {
            sums.add(factors.row(r), 1.0);
            sum_y += values[r];
        }
    }
    const detail::RegressionDesign design(sums);
    const auto fit = detail::finish_regression(design, values, mask, ones, factors, sum_y, min_obs);
    const EffectEstimate& est = fit.estimate;
    if (est.status == EstimateStatus::too_few_observations || est.status == EstimateStatus::rank_deficient)
        fail(to_error_kind(est.status), "alpha_regression: " + std::to_string(static_cast<long>(est.n)) +
                                            " jointly observed periods, " +
                                            std::to_string(design.parameters()) + " regressors");

    StrategyStat s;
    const EffectEstimate raw = weighted_mean_estimate(values, mask, ones, 2);
    s.mean = raw.effect;
    s.t_stat = raw.t();
    s.n_obs = static_cast<std::size_t>(est.n);
    s.alpha = est.effect;
    s.t_alpha = est.ok() ? est.effect / est.se : std::numeric_limits<double>::quiet_NaN();
    std::vector<double> resid(values.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t r = 0; r < values.size(); ++r) {
        if (!mask[r])
            continue;
        double e = values[r] - est.effect;
        const auto f = factors.row(r);
        for (std::size_t a = 0; a < design.kept.size(); ++a)
            e -= fit.slopes(static_cast<Eigen::Index>(a)) * f[static_cast<std::size_t>(design.kept[a])];
        resid[r] = e;
    }
    s.residuals = std::move(resid);
    return s;
}

/// One entry per panel column. Columns failing estimation are flagged, never dropped.
struct ColumnStat {
    std::optional<StrategyStat> stat;
    std::optional<ErrorKind> excluded_reason;

    [[nodiscard]] bool excluded() const noexcept { return excluded_reason.has_value(); }
};

inline std::vector<ColumnStat> panel_stats(const ReturnPanel& panel, const FactorPanel* factors = nullptr,
                                           std::size_t min_obs = kDefaultMinObs)
{
    if (factors != nullptr)
        factors->require_aligned(panel);
    std::vector<ColumnStat> out(panel.strategies());
    for (std::size_t c = 0; c < panel.strategies(); ++c) {
        try {
            out[c].stat = factors ? alpha_regression(panel.column(c), panel.column_mask(c), *factors, min_obs)
                                  : t_stat_mean(panel.column(c), panel.column_mask(c), min_obs);
        } catch (const Error& e) {
            out[c].excluded_reason = e.kind();
        }
    }
    return out;
}

/// Columns whose in-sample effect is estimable, plus the indices and reasons of those that are not.
struct ColumnScreen {
    std::vector<std::size_t> kept;
    std::vector<std::pair<std::size_t, EstimateStatus>> dropped;
};

inline ColumnScreen screen_columns(const ReturnPanel& panel, const FactorPanel* factors, EffectMode mode,
                                   std::size_t min_obs)
{
    const EffectEstimator estimator(panel, factors, mode, min_obs);
    const auto est = estimator.in_sample();
    ColumnScreen screen;
    for (std::size_t c = 0; c < est.size(); ++c) {
        if (est[c].ok())
            screen.kept.push_back(c);
        else
            screen.dropped.emplace_back(c, est[c].status);
    }
    return screen;
}

} // namespace mtcal
