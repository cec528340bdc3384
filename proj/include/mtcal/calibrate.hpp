#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mtcal/error.hpp"
#include "mtcal/fingerprint.hpp"
#include "mtcal/inject.hpp"
#include "mtcal/panel.hpp"
#include "mtcal/parallel.hpp"
#include "mtcal/procedures.hpp"
#include "mtcal/rates.hpp"
#include "mtcal/resample.hpp"

namespace mtcal {

enum class ProcedureKind { bh, by, storey, rsw };

struct ProcedureSpec {
    ProcedureKind kind = ProcedureKind::bh;
    double theta = 0.0;  // storey only

    [[nodiscard]] std::string label() const
    {
        switch (kind) {
        case ProcedureKind::bh: return "bh";
        case ProcedureKind::by: return "by";
        case ProcedureKind::rsw: return "rsw";
        case ProcedureKind::storey: {
            char buf[32];
            std::snprintf(buf, sizeof buf, "storey(%g)", theta);
            return buf;
        }
        }
        return "unknown";
    }

    static ProcedureSpec parse(const std::string& text)
    {
        if (text == "bh")
            return {ProcedureKind::bh, 0.0};
        if (text == "by")
            return {ProcedureKind::by, 0.0};
        if (text == "rsw")
            return {ProcedureKind::rsw, 0.0};
        if (text.rfind("storey(", 0) == 0 && text.back() == ')') {
            double theta = 0.0;
            if (detail::parse_double(text.substr(7, text.size() - 8), theta) && theta > 0.0 && theta < 1.0)
                return {ProcedureKind::storey, theta};
        }
        fail(ErrorKind::Config, "unknown procedure '" + text + "' (expected bh, by, rsw or storey(theta))");
    }
};

/// Label used for fixed t-cutoff cells; their `level` is the cutoff.
inline constexpr const char* kCutoffMethod = "cutoff";
/// Label of the optimal-cutoff benchmark added by compare_methods.
inline constexpr const char* kOptimalMethod = "hl_opt";

struct CalibrationRequest {
    ReturnPanel panel;
    std::optional<FactorPanel> factors;
    std::vector<double> p0_grid{0.0};
    std::vector<double> alpha_grid;
    std::vector<double> cutoff_grid;
    std::vector<ProcedureSpec> procedures;
    BootstrapPlan plan;
    EffectMode mode = EffectMode::raw_mean;
    Sidedness sidedness = Sidedness::one_sided_right;
    std::size_t min_obs = kDefaultMinObs;
    RswOptions rsw;

    void validate() const
    {
        auto increasing = [](const std::vector<double>& v, const char* what, bool allow_empty) {
            if (v.empty() && !allow_empty)
                fail(ErrorKind::InvalidArgument, std::string(what) + " must be nonempty");
            for (std::size_t k = 1; k < v.size(); ++k) {
                if (!(v[k] > v[k - 1]))
                    fail(ErrorKind::InvalidArgument, std::string(what) + " must be strictly increasing");
            }
        };
        increasing(p0_grid, "p0_grid", false);
        increasing(alpha_grid, "alpha_grid", procedures.empty());
        increasing(cutoff_grid, "cutoff_grid", true);
        if (cutoff_grid.empty() && procedures.empty())
            fail(ErrorKind::InvalidArgument, "request evaluates neither cutoffs nor procedures");
        for (double p0 : p0_grid)
            InjectionConfig{p0, mode, sidedness, min_obs}.validate();
        for (double a : alpha_grid) {
            if (!(a > 0.0 && a < 1.0))
                fail(ErrorKind::InvalidArgument, "significance levels must lie in (0, 1)");
        }
        if (plan.I < 1 || plan.J < 1)
            fail(ErrorKind::InvalidArgument, "I and J must be at least 1");
        if (mode == EffectMode::factor_alpha && !factors)
            fail(ErrorKind::InvalidArgument, "factor_alpha mode needs a factor panel");
        for (const auto& p : procedures) {
            if (p.kind == ProcedureKind::rsw)
                rsw.validate();
        }
    }
};

struct RateSummary {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();

    bool operator==(const RateSummary&) const = default;
};

/// Error rates of one (p0, method, level) combination; `se` is across outer iterations.
struct ErrorRateCell {
    double p0 = 0.0;
    std::string method;
    double level = 0.0;
    bool valid = true;
    std::string error;
    std::size_t I = 0;
    std::size_t J = 0;
    RateSummary type1;
    RateSummary type2;
    RateSummary oratio;
    RateSummary tpr;
    RateSummary fpr;
    /// hl_opt cells: the chosen cutoff and whether the target was attained.
    std::optional<double> cutoff;
    std::optional<bool> attained;
};

struct Provenance {
    std::uint64_t seed = 0;
    std::size_t I = 0;
    std::size_t J = 0;
    std::vector<double> p0_grid;
    std::vector<double> alpha_grid;
    std::vector<double> cutoff_grid;
    std::vector<std::string> procedures;
    std::string mode;
    std::string sidedness;
    std::size_t min_obs = 0;
    std::size_t periods = 0;
    std::size_t strategies = 0;
    std::vector<std::string> dropped;
    std::string data_fingerprint;
    std::string factor_fingerprint;
    std::string rsw_variant;
};

struct ErrorRateReport {
    Provenance provenance;
    std::vector<ErrorRateCell> cells;

    [[nodiscard]] const ErrorRateCell* find(double p0, const std::string& method, double level) const
    {
        for (const auto& c : cells) {
            if (c.p0 == p0 && c.method == method && c.level == level)
                return &c;
        }
        return nullptr;
    }

    [[nodiscard]] const ErrorRateCell& at(double p0, const std::string& method, double level) const
    {
        if (const auto* c = find(p0, method, level))
            return *c;
        fail(ErrorKind::OutOfRange, "no cell for method '" + method + "'");
    }
};

/// Per-cell sums over the inner draws of one outer iteration.
struct CellTally {
    bool valid = true;
    std::string error;
    double sum[5] = {0, 0, 0, 0, 0};  // rfdr, rmiss, rratio, tpr, fpr
    std::size_t count = 0;

    void add(const RealizedRates& r) noexcept
    {
        sum[0] += r.rfdr;
        sum[1] += r.rmiss;
        sum[2] += r.rratio;
        sum[3] += r.tpr;
        sum[4] += r.fpr;
        ++count;
    }
};

using OuterTally = std::vector<CellTally>;

/// Optional persistence for long runs: `load` returns a stored tally for outer iteration i
/// (skipping its computation), `store` receives each freshly computed one.
struct CalibrationHooks {
    std::function<std::optional<OuterTally>(std::size_t)> load;
    std::function<void(std::size_t, const OuterTally&)> store;
};

/// Reusable double-bootstrap evaluator. Works on the shifted-estimate identity: resampling a
/// pseudo-sample Y_i equals resampling X_0 and adding the injection shift to each effect, so
/// each draw's base estimates are computed once and shared by all p0 values.
class DoubleBootstrap {
public:
    explicit DoubleBootstrap(const CalibrationRequest& req) : req_(req)
    {
        req_.validate();
        const FactorPanel* f = req_.factors ? &*req_.factors : nullptr;
        base_ = screen_for_null(req_.panel, f, req_.mode, req_.min_obs);
        estimator_.emplace(base_.panel, f, req_.mode, req_.min_obs);
        for (double c : req_.cutoff_grid)
            methods_.push_back({kCutoffMethod, c, nullptr});
        for (const auto& p : req_.procedures) {
            for (double a : req_.alpha_grid)
                methods_.push_back({p.label(), a, &p});
        }
        if (std::any_of(req_.procedures.begin(), req_.procedures.end(),
                        [](const ProcedureSpec& p) { return p.kind == ProcedureKind::rsw; }))
            rsw_subsets_ = rsw_subsets(base_.panel.strategies(), req_.rsw);
    }

    // methods_ points into req_.procedures
    DoubleBootstrap(const DoubleBootstrap&) = delete;
    DoubleBootstrap& operator=(const DoubleBootstrap&) = delete;

    [[nodiscard]] std::size_t cells() const noexcept { return req_.p0_grid.size() * methods_.size(); }
    [[nodiscard]] const NullBase& base() const noexcept { return base_; }

    /// All inner draws of outer iteration i.
    [[nodiscard]] OuterTally outer(std::size_t i) const
    {
        const std::size_t n = base_.panel.strategies();
        const std::size_t d = base_.panel.periods();
        const std::size_t np0 = req_.p0_grid.size();
        const std::size_t nm = methods_.size();
        const BootstrapPlan plan{req_.plan.master_seed, req_.plan.I, req_.plan.J, d};
        OuterTally tally(cells());

        const auto boot = estimator_->estimate(multiplicities(draw_indices(plan, Stage::outer, i, 0), d));
        std::vector<std::optional<InjectionPlan>> plans(np0);
        for (std::size_t q = 0; q < np0; ++q) {
            try {
                plans[q] = plan_injection(base_.estimates, boot,
                                          {req_.p0_grid[q], req_.mode, req_.sidedness, req_.min_obs});
            } catch (const Error& e) {
                for (std::size_t m = 0; m < nm; ++m) {
                    tally[q * nm + m].valid = false;
                    tally[q * nm + m].error = e.what();
                }
            }
        }

        std::vector<EffectEstimate> est(n);
        std::vector<double> t(n);
        std::vector<double> p(n);
        std::vector<std::uint8_t> decisions(n);
        std::vector<std::size_t> true_prefix(n + 1);
        for (std::size_t j = 0; j < req_.plan.J; ++j) {
            const IndexDraw inner = draw_indices(plan, Stage::inner, i, j);
            estimator_->estimate(multiplicities(inner, d), est);
            std::optional<RswStatistics> rsw_stats;
            for (std::size_t q = 0; q < np0; ++q) {
                if (!plans[q])
                    continue;
                const InjectionPlan& ip = *plans[q];
                const auto& truth = ip.truth;
                for (std::size_t c = 0; c < n; ++c)
                    t[c] = est[c].ok() ? (est[c].effect + ip.shift[c]) / est[c].se
                                       : std::numeric_limits<double>::quiet_NaN();
                std::optional<SortedPValues> sorted;
                if (!req_.procedures.empty()) {
                    for (std::size_t c = 0; c < n; ++c)
                        p[c] = req_.sidedness == Sidedness::one_sided_right ? normal_p_one_sided(t[c])
                                                                             : normal_p_two_sided(t[c]);
                    sorted.emplace(p);
                    true_prefix[0] = 0;
                    for (std::size_t k = 0; k < n; ++k)
                        true_prefix[k + 1] = true_prefix[k] + truth[sorted->order()[k]];
                }
                const std::size_t total_true = ip.selected.size();
                for (std::size_t m = 0; m < nm; ++m) {
                    CellTally& cell = tally[q * nm + m];
                    if (!cell.valid)
                        continue;
                    const Method& meth = methods_[m];
                    try {
                        if (meth.proc == nullptr) {
                            for (std::size_t c = 0; c < n; ++c)
                                decisions[c] = reject_t(t[c], meth.level, req_.sidedness) ? 1 : 0;
                            cell.add(realized_rates(count_outcomes(decisions, truth)));
                            continue;
                        }
                        if (meth.proc->kind == ProcedureKind::rsw) {
                            if (!rsw_stats) {
                                RswOptions opts = req_.rsw;
                                opts.sidedness = req_.sidedness;
                                opts.seed = derive_seed(req_.plan.master_seed, Stage::rsw, i, j);
                                rsw_stats = rsw_statistics(*estimator_, {}, inner, opts);
                            }
                            cell.add(rsw_rates(*rsw_stats, ip, est, meth.level));
                            continue;
                        }
                        std::size_t k = 0;
                        switch (meth.proc->kind) {
                        case ProcedureKind::bh: k = bh_count(*sorted, meth.level); break;
                        case ProcedureKind::by: k = by_count(*sorted, meth.level); break;
                        case ProcedureKind::storey: k = storey_count(*sorted, meth.level, meth.proc->theta); break;
                        case ProcedureKind::rsw: break;
                        }
                        ContingencyCounts cc;
                        cc.tp = true_prefix[k];
                        cc.fp = k - cc.tp;
                        cc.fn = total_true - cc.tp;
                        cc.tn = n - total_true - cc.fp;
                        cell.add(realized_rates(cc));
                    } catch (const Error& e) {
                        cell.valid = false;
                        cell.error = e.what();
                    }
                }
            }
        }
        return tally;
    }

    [[nodiscard]] ErrorRateReport run(std::size_t threads = 1, const CalibrationHooks& hooks = {}) const
    {
        const std::size_t I = req_.plan.I;
        std::vector<OuterTally> per_outer(I);
        std::mutex store_mutex;
        parallel_for(I, threads, [&](std::size_t i) {
            if (hooks.load) {
                if (auto t = hooks.load(i)) {
                    if (t->size() != cells())
                        fail(ErrorKind::Config, "checkpoint does not match the request");
                    per_outer[i] = std::move(*t);
                    return;
                }
            }
            per_outer[i] = outer(i);
            if (hooks.store) {
                const std::lock_guard<std::mutex> lock(store_mutex);
                hooks.store(i, per_outer[i]);
            }
        });
        return assemble(per_outer);
    }

    [[nodiscard]] ErrorRateReport assemble(const std::vector<OuterTally>& per_outer) const
    {
        ErrorRateReport report;
        report.provenance = provenance();
        const std::size_t nm = methods_.size();
        const std::size_t I = per_outer.size();
        for (std::size_t q = 0; q < req_.p0_grid.size(); ++q) {
            for (std::size_t m = 0; m < nm; ++m) {
                ErrorRateCell cell;
                cell.p0 = req_.p0_grid[q];
                cell.method = methods_[m].label;
                cell.level = methods_[m].level;
                cell.I = I;
                cell.J = req_.plan.J;
                for (std::size_t i = 0; i < I; ++i) {
                    const CellTally& t = per_outer[i][q * nm + m];
                    if (!t.valid && cell.valid) {
                        cell.valid = false;
                        cell.error = "outer iteration " + std::to_string(i) + ": " + t.error;
                    }
                }
                if (cell.valid) {
                    RateSummary* out[5] = {&cell.type1, &cell.type2, &cell.oratio, &cell.tpr, &cell.fpr};
                    for (int r = 0; r < 5; ++r) {
                        double sum = 0.0;
                        for (std::size_t i = 0; i < I; ++i)
                            sum += per_outer[i][q * nm + m].sum[r] / static_cast<double>(per_outer[i][q * nm + m].count);
                        const double mean = sum / static_cast<double>(I);
                        double ss = 0.0;
                        for (std::size_t i = 0; i < I; ++i) {
                            const double v = per_outer[i][q * nm + m].sum[r] /
                                                 static_cast<double>(per_outer[i][q * nm + m].count) -
                                             mean;
                            ss += v * v;
                        }
                        out[r]->mean = mean;
                        out[r]->se = I > 1 ? std::sqrt(ss / static_cast<double>(I - 1) / static_cast<double>(I)) : 0.0;
                    }
                }
                report.cells.push_back(std::move(cell));
            }
        }
        return report;
    }

    [[nodiscard]] Provenance provenance() const
    {
        Provenance p;
        p.seed = req_.plan.master_seed;
        p.I = req_.plan.I;
        p.J = req_.plan.J;
        p.p0_grid = req_.p0_grid;
        p.alpha_grid = req_.alpha_grid;
        p.cutoff_grid = req_.cutoff_grid;
        for (const auto& proc : req_.procedures)
            p.procedures.push_back(proc.label());
        p.mode = to_string(req_.mode);
        p.sidedness = to_string(req_.sidedness);
        p.min_obs = req_.min_obs;
        p.periods = base_.panel.periods();
        p.strategies = base_.panel.strategies();
        for (const auto& [c, status] : base_.dropped)
            p.dropped.push_back(req_.panel.names()[c]);
        p.data_fingerprint = fingerprint(req_.panel);
        if (req_.factors)
            p.factor_fingerprint = fingerprint(*req_.factors);
        if (std::any_of(req_.procedures.begin(), req_.procedures.end(),
                        [](const ProcedureSpec& s) { return s.kind == ProcedureKind::rsw; }))
            p.rsw_variant = kRswTag;
        return p;
    }

private:
    struct Method {
        std::string label;
        double level;
        const ProcedureSpec* proc;
    };

    /// RSW on the pseudo-sample; realized rates are averaged over column subsets.
    [[nodiscard]] RealizedRates rsw_rates(const RswStatistics& base_stats, const InjectionPlan& ip,
                                          const std::vector<EffectEstimate>& est, double alpha) const
    {
        RswStatistics stats = base_stats;
        const bool two = req_.sidedness == Sidedness::two_sided;
        for (std::size_t c = 0; c < est.size(); ++c) {
            const double t =
                est[c].ok() ? (est[c].effect + ip.shift[c]) / est[c].se : std::numeric_limits<double>::quiet_NaN();
            stats.observed[c] = two ? std::abs(t) : t;
        }
        const double alphas[] = {alpha};
        const auto subsets = rsw_from_statistics(stats, rsw_subsets_, alphas).front();
        RealizedRates mean;
        for (const auto& sub : subsets) {
            std::vector<std::uint8_t> truth(sub.columns.size());
            for (std::size_t a = 0; a < sub.columns.size(); ++a)
                truth[a] = ip.truth[sub.columns[a]];
            const RealizedRates r = realized_rates(count_outcomes(sub.result.reject, truth));
            mean.rfdr += r.rfdr;
            mean.rmiss += r.rmiss;
            mean.rratio += r.rratio;
            mean.tpr += r.tpr;
            mean.fpr += r.fpr;
        }
        const double k = static_cast<double>(subsets.size());
        mean.rfdr /= k;
        mean.rmiss /= k;
        mean.rratio /= k;
        mean.tpr /= k;
        mean.fpr /= k;
        return mean;
    }

    CalibrationRequest req_;
    NullBase base_;
    std::optional<EffectEstimator> estimator_;
    std::vector<Method> methods_;
    std::vector<std::vector<std::size_t>> rsw_subsets_;
};

inline ErrorRateReport double_bootstrap(const CalibrationRequest& req, std::size_t threads = 1,
                                        const CalibrationHooks& hooks = {})
{
    return DoubleBootstrap(req).run(threads, hooks);
}

/// 1.5, 1.6, ..., 5.0
inline std::vector<double> default_cutoff_grid(double lo = 1.5, double hi = 5.0, double step = 0.1)
{
    std::vector<double> grid;
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t k = 0; k <= n; ++k)
        grid.push_back(std::round((lo + static_cast<double>(k) * step) * 1e10) / 1e10);
    return grid;
}

struct CutoffChoice {
    double t_star = 0.0;
    double achieved_type1 = 0.0;
    double type1_se = 0.0;
    bool attained = false;
    std::size_t index = 0;
};

/// Among grid points with TYPE1 <= target, the one with the largest TYPE1 (ties go to the
/// smaller cutoff). Without any admissible point, the largest cutoff flagged unattained.
inline CutoffChoice select_cutoff(std::span<const double> grid, std::span<const double> type1,
                                  std::span<const double> type1_se, double target)
{
    if (grid.empty() || grid.size() != type1.size() || type1_se.size() != type1.size())
        fail(ErrorKind::LengthMismatch, "select_cutoff: grid and rates differ in length");
    std::optional<std::size_t> best;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        if (!(type1[g] <= target))
            continue;
        if (!best || type1[g] > type1[*best])
            best = g;
    }
    CutoffChoice out;
    out.attained = best.has_value();
    out.index = best.value_or(grid.size() - 1);
    out.t_star = grid[out.index];
    out.achieved_type1 = type1[out.index];
    out.type1_se = type1_se[out.index];
    return out;
}

/// Cutoff choice for one (p0, target) plus the full TYPE1 curve it was chosen from.
struct CutoffSolution {
    double p0 = 0.0;
    double target = 0.0;
    CutoffChoice choice;
    std::vector<double> grid;
    std::vector<double> type1;
    std::vector<double> type1_se;
};

inline CutoffSolution solve_from_report(const ErrorRateReport& report, double p0, double target,
                                        std::span<const double> grid)
{
    CutoffSolution sol;
    sol.p0 = p0;
    sol.target = target;
    sol.grid.assign(grid.begin(), grid.end());
    for (double c : grid) {
        const ErrorRateCell& cell = report.at(p0, kCutoffMethod, c);
        if (!cell.valid)
            fail(ErrorKind::PositivityViolation, "cutoff cell invalid: " + cell.error);
        sol.type1.push_back(cell.type1.mean);
        sol.type1_se.push_back(cell.type1.se);
    }
    sol.choice = select_cutoff(sol.grid, sol.type1, sol.type1_se, target);
    return sol;
}

/// Solves for the cutoff at one p0 and target by evaluating the whole grid.
inline CutoffSolution solve_cutoff(const ReturnPanel& panel, const FactorPanel* factors, double p0,
                                   double alpha_target, const BootstrapPlan& plan,
                                   EffectMode mode = EffectMode::raw_mean,
                                   Sidedness sidedness = Sidedness::one_sided_right,
                                   std::vector<double> grid = default_cutoff_grid(), std::size_t threads = 1,
                                   std::size_t min_obs = kDefaultMinObs)
{
    CalibrationRequest req;
    req.panel = panel;
    if (factors)
        req.factors = *factors;
    req.p0_grid = {p0};
    req.cutoff_grid = grid;
    req.plan = plan;
    req.mode = mode;
    req.sidedness = sidedness;
    req.min_obs = min_obs;
    const ErrorRateReport report = double_bootstrap(req, threads);
    return solve_from_report(report, p0, alpha_target, grid);
}

/// Procedures of the request plus the optimal fixed cutoff (hl_opt) per (p0, alpha): the TYPE2
/// achieved at the solved cutoff on the same draws. Cutoffs default to the solver grid.
inline ErrorRateReport compare_methods(CalibrationRequest req, std::size_t threads = 1,
                                       const CalibrationHooks& hooks = {})
{
    if (req.cutoff_grid.empty())
        req.cutoff_grid = default_cutoff_grid();
    if (req.alpha_grid.empty())
        fail(ErrorKind::InvalidArgument, "compare_methods needs an alpha grid");
    ErrorRateReport report = double_bootstrap(req, threads, hooks);
    for (double p0 : req.p0_grid) {
        for (double a : req.alpha_grid) {
            ErrorRateCell opt;
            opt.p0 = p0;
            opt.method = kOptimalMethod;
            opt.level = a;
            opt.I = req.plan.I;
            opt.J = req.plan.J;
            try {
                const CutoffSolution sol = solve_from_report(report, p0, a, req.cutoff_grid);
                const ErrorRateCell& chosen = report.at(p0, kCutoffMethod, sol.choice.t_star);
                opt.type1 = chosen.type1;
                opt.type2 = chosen.type2;
                opt.oratio = chosen.oratio;
                opt.tpr = chosen.tpr;
                opt.fpr = chosen.fpr;
                opt.cutoff = sol.choice.t_star;
                opt.attained = sol.choice.attained;
            } catch (const Error& e) {
                opt.valid = false;
                opt.error = e.what();
            }
            report.cells.push_back(std::move(opt));
        }
    }
    return report;
}

} // namespace mtcal
