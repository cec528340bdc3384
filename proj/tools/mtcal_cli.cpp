#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mtcal/mtcal.hpp"

namespace fs = std::filesystem;
using mtcal::io::json;

namespace {

int exit_code(mtcal::ErrorKind kind)
{
    switch (kind) {
    case mtcal::ErrorKind::Config: return 2;
    case mtcal::ErrorKind::BudgetExceeded: return 4;
    default: return 3;
    }
}

struct Context {
    std::string command;
    mtcal::config::RunConfig cfg;
    fs::path out_dir;
    std::optional<fs::path> checkpoint;
    std::vector<std::pair<std::string, fs::path>> inputs;
    std::vector<std::string> outputs;

    void write(const std::string& name, const std::string& text)
    {
        mtcal::io::write_text(out_dir / name, text);
        outputs.push_back(name);
    }

    mtcal::ReturnPanel panel()
    {
        if (!cfg.inputs.panel)
            mtcal::fail(mtcal::ErrorKind::Config, "command '" + command + "' needs inputs.panel or --panel");
        inputs.emplace_back("panel", *cfg.inputs.panel);
        return mtcal::io::load_panel(*cfg.inputs.panel);
    }

    std::optional<mtcal::FactorPanel> factors()
    {
        if (!cfg.inputs.factors)
            return std::nullopt;
        inputs.emplace_back("factors", *cfg.inputs.factors);
        return mtcal::io::load_factors(*cfg.inputs.factors);
    }

    void finish()
    {
        outputs.push_back("manifest.json");
        mtcal::io::write_text(out_dir / "manifest.json",
                              mtcal::io::dump(mtcal::io::manifest(command, cfg.raw, cfg.seed, inputs, outputs)));
    }
};

/// JSON-lines checkpoint: existing lines are loaded on start, new records appended.
class JsonlLog {
public:
    explicit JsonlLog(std::optional<fs::path> path) : path_(std::move(path))
    {
        if (!path_ || !fs::exists(*path_))
            return;
        std::ifstream in(*path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty())
                continue;
            try {
                lines_.push_back(json::parse(line));
            } catch (const nlohmann::json::parse_error&) {
                break;  // torn final line from an interrupted run
            }
        }
    }

    [[nodiscard]] const std::vector<json>& lines() const noexcept { return lines_; }

    void append(const json& j)
    {
        if (!path_)
            return;
        const std::lock_guard<std::mutex> lock(mutex_);
        std::ofstream out(*path_, std::ios::app);
        out << j.dump() << "\n";
    }

private:
    std::optional<fs::path> path_;
    std::vector<json> lines_;
    std::mutex mutex_;
};

mtcal::CalibrationRequest make_request(Context& ctx, std::vector<double> cutoffs, bool with_procedures)
{
    const auto& c = ctx.cfg.calibration;
    mtcal::CalibrationRequest req;
    req.panel = ctx.panel();
    req.factors = ctx.factors();
    req.p0_grid = c.p0_grid;
    req.alpha_grid = c.alpha_grid;
    req.cutoff_grid = std::move(cutoffs);
    if (with_procedures)
        req.procedures = c.procedures;
    req.plan = {ctx.cfg.seed, c.I, c.J, req.panel.periods()};
    req.mode = c.mode;
    req.sidedness = c.sidedness;
    req.min_obs = c.min_obs;
    req.rsw = c.rsw;
    return req;
}

mtcal::CalibrationHooks calibration_hooks(JsonlLog& log, std::map<std::size_t, mtcal::OuterTally>& stored)
{
    for (const auto& line : log.lines()) {
        auto [i, tally] = mtcal::io::tally_from_json(line);
        stored[i] = std::move(tally);
    }
    mtcal::CalibrationHooks hooks;
    hooks.load = [&stored](std::size_t i) -> std::optional<mtcal::OuterTally> {
        const auto it = stored.find(i);
        if (it == stored.end())
            return std::nullopt;
        return it->second;
    };
    hooks.store = [&log](std::size_t i, const mtcal::OuterTally& t) { log.append(mtcal::io::to_json(i, t)); };
    return hooks;
}

void emit_report(Context& ctx, const mtcal::ErrorRateReport& report)
{
    ctx.write("report.json", mtcal::io::dump(mtcal::io::to_json(report)));
    ctx.write("report.csv", mtcal::io::report_csv(report));
    if (!report.provenance.cutoff_grid.empty()) {
        ctx.write("plot_error_vs_cutoff.csv", mtcal::io::plot_error_vs_cutoff(report));
        ctx.write("plot_roc.csv", mtcal::io::plot_roc(report));
    }
}

void run_calibration(Context& ctx, bool compare, bool solve)
{
    auto cutoffs = ctx.cfg.calibration.cutoff_grid;
    if (cutoffs.empty() && (compare || solve || ctx.command == "roc"))
        cutoffs = mtcal::default_cutoff_grid();
    auto req = make_request(ctx, cutoffs, ctx.command != "roc" && ctx.command != "solve-cutoff");
    JsonlLog log(ctx.checkpoint);
    std::map<std::size_t, mtcal::OuterTally> stored;
    const auto hooks = calibration_hooks(log, stored);
    const auto report = compare ? mtcal::compare_methods(req, ctx.cfg.threads, hooks)
                                : mtcal::double_bootstrap(req, ctx.cfg.threads, hooks);
    emit_report(ctx, report);
    if (solve) {
        std::vector<mtcal::CutoffSolution> sols;
        json arr = json::array();
        for (double target : ctx.cfg.calibration.targets) {
            for (double p0 : req.p0_grid) {
                sols.push_back(mtcal::solve_from_report(report, p0, target, req.cutoff_grid));
                arr.push_back(mtcal::io::to_json(sols.back()));
            }
        }
        ctx.write("cutoffs.json", mtcal::io::dump(arr));
        ctx.write("plot_cutoff_vs_p0.csv", mtcal::io::plot_cutoff_vs_p0(sols));
    }
}

void run_ffjoint(Context& ctx)
{
    const auto& f = ctx.cfg.ffjoint;
    const auto panel = ctx.panel();
    const auto factors = ctx.factors();
    const mtcal::FactorPanel* fp = factors ? &*factors : nullptr;
    if (f.test.mode == mtcal::EffectMode::factor_alpha && !fp)
        mtcal::fail(mtcal::ErrorKind::Config, "ffjoint in factor_alpha mode needs inputs.factors");

    std::vector<mtcal::WindowPanel> samples;
    if (f.windows.empty()) {
        const mtcal::PeriodWindow all{0, panel.periods()};
        samples = mtcal::subsample_split(panel, std::span(&all, 1), f.complete_only, fp);
    } else {
        std::vector<mtcal::PeriodWindow> wins;
        for (const auto& [a, b] : f.windows)
            wins.push_back(mtcal::window_from_labels(panel.period_labels(), a, b));
        samples = mtcal::subsample_split(panel, wins, f.complete_only, fp);
    }

    std::vector<std::string> labels;
    std::vector<mtcal::JointTestResult> results;
    json tests = json::array();
    for (std::size_t w = 0; w < samples.size(); ++w) {
        const auto& s = samples[w];
        for (std::size_t t : f.min_obs_grid) {
            auto cfg = f.test;
            cfg.min_obs_T = t;
            const auto* sf = s.factors ? &*s.factors : nullptr;
            auto r = mtcal::ff_joint_test(s.panel, sf, cfg, mtcal::derive_seed(ctx.cfg.seed, mtcal::Stage::joint_test, w, t));
            const std::string label = s.panel.period_labels().front() + ".." + s.panel.period_labels().back() +
                                      " T>=" + std::to_string(t);
            json j = mtcal::io::to_json(r);
            j["sample"] = label;
            j["min_obs_T"] = t;
            tests.push_back(j);
            labels.push_back(label);
            results.push_back(std::move(r));
        }
    }
    ctx.write("joint_test.json", mtcal::io::dump(tests));
    ctx.write("joint_test.csv", mtcal::io::joint_test_csv(labels, results));

    if (f.error_p0.empty())
        return;
    std::vector<mtcal::FfErrorRates> rates;
    json arr = json::array();
    for (std::size_t t : f.min_obs_grid) {
        for (double p0 : f.error_p0) {
            auto cfg = f.test;
            cfg.min_obs_T = t;
            rates.push_back(mtcal::ff_error_rates(panel, fp, p0, cfg, f.M,
                                                  mtcal::derive_seed(ctx.cfg.seed, mtcal::Stage::perturb, t),
                                                  ctx.cfg.threads));
            json j = mtcal::io::to_json(rates.back());
            j["min_obs_T"] = t;
            arr.push_back(j);
        }
    }
    ctx.write("ff_error_rates.json", mtcal::io::dump(arr));
    ctx.write("ff_error_rates.csv", mtcal::io::ff_error_rates_csv(rates));
}

void run_frac(Context& ctx)
{
    const auto& f = ctx.cfg.frac;
    const auto panel = ctx.panel();
    const auto factors = ctx.factors();
    const mtcal::FactorPanel* fp = factors ? &*factors : nullptr;
    const double observed = mtcal::frac_statistic(panel, fp, f.test, ctx.cfg.seed, f.frac);
    const auto sim = mtcal::frac_simulation(panel, fp, f.p0, f.test, f.I, f.J, ctx.cfg.seed, f.frac, ctx.cfg.threads);
    json j = mtcal::io::to_json(sim);
    j["observed_frac"] = observed;
    ctx.write("frac.json", mtcal::io::dump(j));
    std::string csv = "replication,frac\n";
    for (std::size_t k = 0; k < sim.values.size(); ++k)
        csv += std::to_string(k) + "," + mtcal::io::fmt_double(sim.values[k]) + "\n";
    ctx.write("frac.csv", csv);
}

void run_simstudy(Context& ctx)
{
    auto cfg = ctx.cfg.simstudy;
    cfg.base_panel = ctx.panel();
    cfg.seed = ctx.cfg.seed;
    JsonlLog log(ctx.checkpoint);
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<mtcal::SimRecord>> stored;
    for (const auto& line : log.lines()) {
        auto r = mtcal::io::sim_record_from_json(line);
        stored[{r.gamma, r.m, r.k}].push_back(std::move(r));
    }
    const std::size_t per_key = cfg.cutoffs.size() + cfg.procedures.size() * cfg.deltas.size();
    mtcal::SimHooks hooks;
    hooks.load = [&](std::size_t g, std::size_t m, std::size_t k) -> std::optional<std::vector<mtcal::SimRecord>> {
        const auto it = stored.find({g, m, k});
        if (it == stored.end() || it->second.size() != per_key)
            return std::nullopt;
        return it->second;
    };
    hooks.store = [&](const std::vector<mtcal::SimRecord>& recs) {
        for (const auto& r : recs)
            log.append(mtcal::io::to_json(r));
    };
    const auto report = mtcal::run_sim_study(cfg, ctx.cfg.threads, hooks);
    ctx.write("simstudy.json", mtcal::io::dump(mtcal::io::to_json(report)));
    ctx.write("simstudy.csv", mtcal::io::sim_study_csv(report));
}

void run_gen_synthetic(Context& ctx)
{
    const auto data = mtcal::io::generate_synthetic(ctx.cfg.synthetic, ctx.cfg.seed);
    ctx.write("panel.csv", mtcal::io::format_panel(data.panel));
    ctx.write("truth.csv", mtcal::io::format_truth(data.truth));
    if (data.factors)
        ctx.write("factors.csv", mtcal::io::format_factors(*data.factors));
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Error-rate calibration for multiple hypothesis tests on return panels"};
    std::string command;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "mtcal_out";
    std::optional<std::size_t> threads;
    std::string checkpoint;
    std::string panel_path;
    std::string factors_path;
    app.add_option("command", command, "calibrate | solve-cutoff | compare | roc | ffjoint | frac | simstudy | gen-synthetic")
        ->required()
        ->check(CLI::IsMember(mtcal::config::commands()));
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--seed", seed, "master seed (overrides the config)");
    app.add_option("--out-dir", out_dir, "output directory");
    app.add_option("--threads", threads, "worker threads (overrides MTCAL_THREADS and the config)");
    app.add_option("--checkpoint", checkpoint, "JSON-lines checkpoint file for resumable runs");
    app.add_option("--panel", panel_path, "return panel CSV (overrides inputs.panel)");
    app.add_option("--factors", factors_path, "factor CSV (overrides inputs.factors)");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        Context ctx;
        ctx.command = command;
        json raw = json::object();
        if (!config_path.empty()) {
            ctx.cfg = mtcal::config::load(config_path);
            raw = ctx.cfg.raw;
            const fs::path base = fs::path(config_path).parent_path();
            if (ctx.cfg.inputs.panel && ctx.cfg.inputs.panel->is_relative())
                ctx.cfg.inputs.panel = base / *ctx.cfg.inputs.panel;
            if (ctx.cfg.inputs.factors && ctx.cfg.inputs.factors->is_relative())
                ctx.cfg.inputs.factors = base / *ctx.cfg.inputs.factors;
        }
        if (seed)
            raw["seed"] = *seed;
        const auto inputs = ctx.cfg.inputs;
        ctx.cfg = mtcal::config::parse(raw);
        ctx.cfg.inputs = inputs;
        if (!panel_path.empty())
            ctx.cfg.inputs.panel = panel_path;
        if (!factors_path.empty())
            ctx.cfg.inputs.factors = factors_path;
        ctx.cfg.threads = threads ? *threads : mtcal::threads_from_env(ctx.cfg.threads);
        ctx.out_dir = out_dir;
        if (!checkpoint.empty())
            ctx.checkpoint = checkpoint;
        fs::create_directories(ctx.out_dir);

        if (command == "calibrate")
            run_calibration(ctx, false, false);
        else if (command == "solve-cutoff")
            run_calibration(ctx, false, true);
        else if (command == "compare")
            run_calibration(ctx, true, false);
        else if (command == "roc")
            run_calibration(ctx, false, false);
        else if (command == "ffjoint")
            run_ffjoint(ctx);
        else if (command == "frac")
            run_frac(ctx);
        else if (command == "simstudy")
            run_simstudy(ctx);
        else if (command == "gen-synthetic")
            run_gen_synthetic(ctx);
        ctx.finish();
        std::cout << "wrote " << ctx.outputs.size() << " files to " << ctx.out_dir.string() << "\n";
        return 0;
    } catch (const mtcal::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
