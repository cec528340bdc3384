#pragma once

#include <boost/math/distributions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mtcal/calibrate.hpp"
#include "mtcal/error.hpp"
#include "mtcal/inject.hpp"
#include "mtcal/panel.hpp"
#include "mtcal/parallel.hpp"
#include "mtcal/procedures.hpp"
#include "mtcal/rates.hpp"
#include "mtcal/resample.hpp"

namespace mtcal {

/// Gamma distribution by mean and standard deviation; sigma0 = 0 is a point mass at mu0.
struct GammaSpec {
    double mu0 = 0.05;
    double sigma0 = 0.0;

    void validate() const
    {
        if (!(mu0 > 0.0) || !(sigma0 >= 0.0) || !std::isfinite(mu0) || !std::isfinite(sigma0))
            fail(ErrorKind::InvalidArgument, "gamma spec needs mu0 > 0 and sigma0 >= 0");
    }

    [[nodiscard]] double shape() const { return mu0 * mu0 / (sigma0 * sigma0); }
    [[nodiscard]] double scale() const { return sigma0 * sigma0 / mu0; }
};

/// Inverse-CDF sampling, so the sequence depends only on the seed and not on the standard library.
inline std::vector<double> gamma_sample(const GammaSpec& spec, std::size_t n, std::uint64_t seed)
{
    spec.validate();
    if (spec.sigma0 == 0.0)
        return std::vector<double>(n, spec.mu0);
    const boost::math::gamma_distribution<double> dist(spec.shape(), spec.scale());
    Engine eng(seed);
    std::vector<double> out(n);
    for (auto& v : out) {
        double u = uniform01(eng);
        while (u == 0.0)
            u = uniform01(eng);
        v = boost::math::quantile(dist, u);
    }
    return out;
}

struct SimStudyConfig {
    ReturnPanel base_panel;
    double true_fraction = 0.10;
    std::vector<GammaSpec> gammas{{0.05, 0.025}};
    /// Gamma draws are annual; injected per-period means are draw / periods_per_year.
    double periods_per_year = 12.0;
    std::size_t M = 10;
    std::size_t K = 10;
    std::vector<ProcedureSpec> procedures{{ProcedureKind::bh, 0.0}, {ProcedureKind::by, 0.0}};
    std::vector<double> cutoffs;
    std::vector<double> deltas{0.01, 0.05, 0.10};
    std::vector<double> p0_grid{0.05, 0.10, 0.15};
    /// Inner double bootstrap used by the estimate.
    std::size_t est_I = 20;
    std::size_t est_J = 100;
    std::uint64_t seed = 0;
    std::size_t min_obs = kDefaultMinObs;
    RswOptions rsw;
    /// Upper bound on populations * perturbations * I * J * N * D.
    double max_cost = 1e13;

    void validate() const
    {
        if (M < 1 || K < 1)
            fail(ErrorKind::InvalidArgument, "simulation needs M, K >= 1");
        if (!(true_fraction > 0.0 && true_fraction < 1.0))
            fail(ErrorKind::InvalidArgument, "true_fraction must lie in (0, 1)");
        if (!(periods_per_year > 0.0))
            fail(ErrorKind::InvalidArgument, "periods_per_year must be positive");
        if (gammas.empty())
            fail(ErrorKind::InvalidArgument, "no gamma specs");
        for (const auto& g : gammas)
            g.validate();
        if (procedures.empty() && cutoffs.empty())
            fail(ErrorKind::InvalidArgument, "simulation evaluates neither procedures nor cutoffs");
        if (est_I < 1 || est_J < 1)
            fail(ErrorKind::InvalidArgument, "estimate needs I, J >= 1");
    }

    [[nodiscard]] double cost() const
    {
        return static_cast<double>(gammas.size()) * static_cast<double>(M) * static_cast<double>(K) *
               static_cast<double>(est_I) * static_cast<double>(est_J) *
               static_cast<double>(base_panel.strategies()) * static_cast<double>(base_panel.periods());
    }
};

/// D_m: base columns demeaned, then a uniformly random true_fraction of them shifted to
/// Gamma-drawn means.
inline TruthLabeledPanel build_population(const SimStudyConfig& cfg, const GammaSpec& gamma, std::uint64_t m_seed)
{
    TruthLabeledPanel pop = build_null_panel(cfg.base_panel, EffectMode::raw_mean, nullptr, cfg.min_obs);
    const std::size_t n = pop.panel.strategies();
    const std::size_t k = true_count(cfg.true_fraction, n);
    Engine eng(derive_seed(m_seed, Stage::population, 0));
    const auto chosen = sample_without_replacement(eng, n, k);
    const auto draws = gamma_sample(gamma, k, derive_seed(m_seed, Stage::population, 1));
    std::vector<double> shift(n, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
        const double mean = draws[a] / cfg.periods_per_year;
        shift[chosen[a]] = mean;
        pop.truth[chosen[a]] = 1;
        pop.injected_effect[chosen[a]] = mean;
    }
    pop.panel = shift_columns(pop.panel, shift);
    return pop;
}

/// Realized and estimated FDR of one method on one perturbation.
struct SimRecord {
    std::size_t gamma = 0;
    std::size_t m = 0;
    std::size_t k = 0;
    std::string method;
    double delta = 0.0;
    double actual = 0.0;
    std::vector<double> est;  // per p0; NaN when the estimate's cell is invalid
};

struct SimStudyCell {
    std::string method;
    double delta = 0.0;
    double mu0 = 0.0;
    double sigma0 = 0.0;
    double p0 = 0.0;
    double actual = 0.0;
    double actual_se = 0.0;
    double est = std::numeric_limits<double>::quiet_NaN();
    double est_se = std::numeric_limits<double>::quiet_NaN();
    std::size_t count = 0;
    /// Set only for procedure cells, where delta is a nominal rate.
    std::optional<bool> win;
};

struct SimStudyReport {
    std::vector<SimStudyCell> cells;
    std::size_t M = 0;
    std::size_t K = 0;
    std::uint64_t seed = 0;

    [[nodiscard]] const SimStudyCell& at(const std::string& method, double delta, double mu0, double sigma0,
                                         double p0) const
    {
        for (const auto& c : cells) {
            if (c.method == method && c.delta == delta && c.mu0 == mu0 && c.sigma0 == sigma0 && c.p0 == p0)
                return c;
        }
        fail(ErrorKind::OutOfRange, "no simulation cell for method '" + method + "'");
    }
};

/// Resumable persistence keyed by (gamma, m, k); `load` returning records skips the work.
struct SimHooks {
    std::function<std::optional<std::vector<SimRecord>>(std::size_t, std::size_t, std::size_t)> load;
    std::function<void(const std::vector<SimRecord>&)> store;
};

namespace detail {

/// The estimate only ever sees the perturbed panel, never the truth labels.
inline ErrorRateReport estimate_error_rates(const ReturnPanel& panel, const SimStudyConfig& cfg, std::uint64_t seed)
{
    CalibrationRequest req;
    req.panel = panel;
    req.p0_grid = cfg.p0_grid;
    req.alpha_grid = cfg.deltas;
    req.cutoff_grid = cfg.cutoffs;
    req.procedures = cfg.procedures;
    req.plan = {seed, cfg.est_I, cfg.est_J, panel.periods()};
    req.min_obs = cfg.min_obs;
    req.rsw = cfg.rsw;
    return double_bootstrap(req, 1);
}

inline std::vector<SimRecord> simulate_perturbation(const SimStudyConfig& cfg, const TruthLabeledPanel& pop,
                                                    std::size_t g, std::size_t m, std::size_t k)
{
    const ReturnPanel panel =
        apply_draw(pop.panel, draw_indices(derive_seed(cfg.seed, Stage::sim_perturb, g, m, k), pop.panel.periods()));
    const std::size_t n = panel.strategies();
    const auto est = EffectEstimator(panel, nullptr, EffectMode::raw_mean, cfg.min_obs).in_sample();
    std::vector<double> t(n);
    for (std::size_t c = 0; c < n; ++c)
        t[c] = est[c].t();
    const PValueVector p = p_values_from_t(t);
    const ErrorRateReport report = estimate_error_rates(panel, cfg, derive_seed(cfg.seed, Stage::estimate, g, m, k));

    std::vector<SimRecord> out;
    auto add = [&](const std::string& method, double delta, const std::vector<std::uint8_t>& reject) {
        SimRecord r{g, m, k, method, delta, realized_rates(count_outcomes(reject, pop.truth)).rfdr, {}};
        for (double p0 : cfg.p0_grid) {
            const ErrorRateCell& cell = report.at(p0, method, delta);
            r.est.push_back(cell.valid ? cell.type1.mean : std::numeric_limits<double>::quiet_NaN());
        }
        out.push_back(std::move(r));
    };
    for (double c : cfg.cutoffs) {
        std::vector<std::uint8_t> reject(n);
        for (std::size_t a = 0; a < n; ++a)
            reject[a] = reject_t(t[a], c, Sidedness::one_sided_right) ? 1 : 0;
        add(kCutoffMethod, c, reject);
    }
    for (const auto& proc : cfg.procedures) {
        for (double delta : cfg.deltas) {
            std::vector<std::uint8_t> reject;
            switch (proc.kind) {
            case ProcedureKind::bh: reject = bh(p, delta).reject; break;
            case ProcedureKind::by: reject = by(p, delta).reject; break;
            case ProcedureKind::storey: reject = storey(p, delta, proc.theta).reject; break;
            case ProcedureKind::rsw: {
                RswOptions opts = cfg.rsw;
                opts.seed = derive_seed(cfg.seed, Stage::rsw, g, m, k);
                const auto subsets = rsw(panel, nullptr, EffectMode::raw_mean, delta, opts, cfg.min_obs);
                if (subsets.size() != 1)
                    fail(ErrorKind::InvalidArgument, "simulation RSW needs N <= subsample_size");
                reject = subsets.front().result.reject;
                break;
            }
            }
            add(proc.label(), delta, reject);
        }
    }
    return out;
}

} // namespace detail

/// Actual = mean realized FDR with the truth known; Est = mean double-bootstrap TYPE1 computed
/// from the perturbed panel alone. Both average over M populations x K perturbations.
inline SimStudyReport run_sim_study(const SimStudyConfig& cfg, std::size_t threads = 1, const SimHooks& hooks = {})
{
    cfg.validate();
    if (cfg.cost() > cfg.max_cost)
        fail(ErrorKind::BudgetExceeded, "simulation cost " + std::to_string(cfg.cost()) + " exceeds max_cost " +
                                            std::to_string(cfg.max_cost));
    const std::size_t G = cfg.gammas.size();
    const std::size_t MK = cfg.M * cfg.K;
    std::vector<std::vector<SimRecord>> records(G * MK);
    std::mutex store_mutex;
    for (std::size_t g = 0; g < G; ++g) {
        std::vector<std::optional<TruthLabeledPanel>> pops(cfg.M);
        parallel_for(cfg.M, threads, [&](std::size_t m) {
            pops[m] = build_population(cfg, cfg.gammas[g], derive_seed(cfg.seed, Stage::population, g, m));
        });
        parallel_for(MK, threads, [&](std::size_t idx) {
            const std::size_t m = idx / cfg.K;
            const std::size_t k = idx % cfg.K;
            if (hooks.load) {
                if (auto r = hooks.load(g, m, k)) {
                    records[g * MK + idx] = std::move(*r);
                    return;
                }
            }
            records[g * MK + idx] = detail::simulate_perturbation(cfg, *pops[m], g, m, k);
            if (hooks.store) {
                const std::lock_guard<std::mutex> lock(store_mutex);
                hooks.store(records[g * MK + idx]);
            }
        });
    }

    SimStudyReport report;
    report.M = cfg.M;
    report.K = cfg.K;
    report.seed = cfg.seed;
    for (std::size_t g = 0; g < G; ++g) {
        const std::size_t nrec = records[g * MK].size();
        for (std::size_t r = 0; r < nrec; ++r) {
            double sa = 0.0;
            double ssa = 0.0;
            for (std::size_t idx = 0; idx < MK; ++idx) {
                const double a = records[g * MK + idx][r].actual;
                sa += a;
                ssa += a * a;
            }
            const double n = static_cast<double>(MK);
            const double actual = sa / n;
            const double actual_se = MK > 1 ? std::sqrt(std::max(0.0, (ssa - n * actual * actual) / (n - 1.0)) / n) : 0.0;
            for (std::size_t q = 0; q < cfg.p0_grid.size(); ++q) {
                SimStudyCell cell;
                const SimRecord& first = records[g * MK][r];
                cell.method = first.method;
                cell.delta = first.delta;
                cell.mu0 = cfg.gammas[g].mu0;
                cell.sigma0 = cfg.gammas[g].sigma0;
                cell.p0 = cfg.p0_grid[q];
                cell.actual = actual;
                cell.actual_se = actual_se;
                double se = 0.0;
                double sse = 0.0;
                std::size_t cnt = 0;
                for (std::size_t idx = 0; idx < MK; ++idx) {
                    const double e = records[g * MK + idx][r].est[q];
                    if (std::isnan(e))
                        continue;
                    se += e;
                    sse += e * e;
                    ++cnt;
                }
                cell.count = cnt;
                if (cnt == MK) {
                    const double c = static_cast<double>(cnt);
                    cell.est = se / c;
                    cell.est_se = cnt > 1 ? std::sqrt(std::max(0.0, (sse - c * cell.est * cell.est) / (c - 1.0)) / c) : 0.0;
                    if (cell.method != kCutoffMethod)
                        cell.win = std::abs(cell.est - cell.actual) < std::abs(cell.delta - cell.actual);
                }
                report.cells.push_back(std::move(cell));
            }
        }
    }
    return report;
}

} // namespace mtcal
