#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtcal/calibrate.hpp"
#include "mtcal/error.hpp"
#include "mtcal/ffjoint.hpp"
#include "mtcal/io.hpp"
#include "mtcal/simstudy.hpp"

namespace mtcal::config {

using json = nlohmann::ordered_json;

inline const std::vector<std::string>& commands()
{
    static const std::vector<std::string> c{"calibrate", "solve-cutoff", "compare", "roc",
                                            "ffjoint",   "frac",         "simstudy", "gen-synthetic"};
    return c;
}

/// Rejects keys outside `allowed`, naming the offending path.
inline void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!obj.is_object())
        fail(ErrorKind::Config, where + " must be a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj.items()) {
        if (!ok.count(key))
            fail(ErrorKind::Config, "unknown key '" + key + "' in " + where);
    }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where)
{
    if (!obj.contains(key))
        return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Config, where + "." + key + ": " + e.what());
    }
}

inline EffectMode parse_mode(const std::string& s)
{
    if (s == "raw_mean")
        return EffectMode::raw_mean;
    if (s == "factor_alpha")
        return EffectMode::factor_alpha;
    fail(ErrorKind::Config, "mode must be raw_mean or factor_alpha, got '" + s + "'");
}

inline Sidedness parse_sidedness(const std::string& s)
{
    if (s == "one_sided_right")
        return Sidedness::one_sided_right;
    if (s == "two_sided")
        return Sidedness::two_sided;
    fail(ErrorKind::Config, "sidedness must be one_sided_right or two_sided, got '" + s + "'");
}

struct Inputs {
    std::optional<std::filesystem::path> panel;
    std::optional<std::filesystem::path> factors;
};

struct CalibrationSection {
    std::vector<double> p0_grid{0.0};
    std::vector<double> alpha_grid{0.01, 0.05, 0.10};
    std::vector<double> cutoff_grid;
    std::vector<ProcedureSpec> procedures{{ProcedureKind::bh, 0.0}};
    std::vector<double> targets{0.05};
    std::size_t I = 100;
    std::size_t J = 1000;
    EffectMode mode = EffectMode::raw_mean;
    Sidedness sidedness = Sidedness::one_sided_right;
    std::size_t min_obs = kDefaultMinObs;
    RswOptions rsw;
};

struct FfJointSection {
    JointTestConfig test;
    std::vector<std::size_t> min_obs_grid{8};
    std::size_t M = 1000;
    std::vector<double> error_p0;  // empty: joint test only
    std::vector<std::pair<std::string, std::string>> windows;
    bool complete_only = false;
};

struct FracSection {
    double p0 = 0.01;
    std::size_t I = 100;
    std::size_t J = 100;
    JointTestConfig test;
    FracConfig frac;
};

struct RunConfig {
    json raw;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    Inputs inputs;
    CalibrationSection calibration;
    FfJointSection ffjoint;
    FracSection frac;
    SimStudyConfig simstudy;
    io::SyntheticSpec synthetic;
};

namespace detail {

inline RswOptions parse_rsw(const json& j, const std::string& where)
{
    check_keys(j, {"B", "subsample_size", "subsample_count", "max_cost"}, where);
    RswOptions o;
    o.B = get_or<std::size_t>(j, "B", o.B, where);
    o.subsample_size = get_or<std::size_t>(j, "subsample_size", o.subsample_size, where);
    o.subsample_count = get_or<std::size_t>(j, "subsample_count", o.subsample_count, where);
    o.max_cost = get_or<double>(j, "max_cost", o.max_cost, where);
    return o;
}

inline std::vector<ProcedureSpec> parse_procedures(const json& j, const std::string& where)
{
    std::vector<ProcedureSpec> out;
    for (const auto& s : get_or<std::vector<std::string>>(j, "procedures", {}, where))
        out.push_back(ProcedureSpec::parse(s));
    return out;
}

inline JointTestConfig parse_joint(const json& j, const std::string& where, JointTestConfig cfg)
{
    if (j.contains("statistics")) {
        cfg.statistics.clear();
        for (const auto& s : get_or<std::vector<std::string>>(j, "statistics", {}, where))
            cfg.statistics.push_back(PercentileSpec::parse(s));
    }
    cfg.B = get_or<std::size_t>(j, "B", cfg.B, where);
    cfg.alpha_levels = get_or<std::vector<double>>(j, "levels", cfg.alpha_levels, where);
    cfg.mode = parse_mode(get_or<std::string>(j, "mode", to_string(cfg.mode), where));
    return cfg;
}

} // namespace detail

inline RunConfig parse(const json& root)
{
    RunConfig cfg;
    cfg.raw = root;
    check_keys(root, {"seed", "threads", "checkpoint", "out_dir", "inputs", "calibration", "ffjoint", "frac",
                      "simstudy", "synthetic"},
               "config");
    cfg.seed = get_or<std::uint64_t>(root, "seed", 0, "config");
    cfg.threads = get_or<std::size_t>(root, "threads", 1, "config");

    if (root.contains("inputs")) {
        const json& j = root["inputs"];
        check_keys(j, {"panel", "factors"}, "inputs");
        if (j.contains("panel"))
            cfg.inputs.panel = get_or<std::string>(j, "panel", "", "inputs");
        if (j.contains("factors"))
            cfg.inputs.factors = get_or<std::string>(j, "factors", "", "inputs");
    }

    if (root.contains("calibration")) {
        const json& j = root["calibration"];
        const std::string w = "calibration";
        check_keys(j, {"p0_grid", "alpha_grid", "cutoff_grid", "procedures", "targets", "I", "J", "mode", "sidedness",
                       "min_obs", "rsw"},
                   w);
        auto& c = cfg.calibration;
        c.p0_grid = get_or(j, "p0_grid", c.p0_grid, w);
        c.alpha_grid = get_or(j, "alpha_grid", c.alpha_grid, w);
        c.cutoff_grid = get_or(j, "cutoff_grid", c.cutoff_grid, w);
        if (j.contains("procedures"))
            c.procedures = detail::parse_procedures(j, w);
        c.targets = get_or(j, "targets", c.targets, w);
        c.I = get_or<std::size_t>(j, "I", c.I, w);
        c.J = get_or<std::size_t>(j, "J", c.J, w);
        c.mode = parse_mode(get_or<std::string>(j, "mode", to_string(c.mode), w));
        c.sidedness = parse_sidedness(get_or<std::string>(j, "sidedness", to_string(c.sidedness), w));
        c.min_obs = get_or<std::size_t>(j, "min_obs", c.min_obs, w);
        if (j.contains("rsw"))
            c.rsw = detail::parse_rsw(j["rsw"], w + ".rsw");
    }

    if (root.contains("ffjoint")) {
        const json& j = root["ffjoint"];
        const std::string w = "ffjoint";
        check_keys(j, {"statistics", "B", "levels", "mode", "min_obs_T", "M", "error_p0", "windows", "complete_only"},
                   w);
        auto& f = cfg.ffjoint;
        f.test = detail::parse_joint(j, w, f.test);
        if (j.contains("min_obs_T")) {
            if (j["min_obs_T"].is_array())
                f.min_obs_grid = get_or<std::vector<std::size_t>>(j, "min_obs_T", {}, w);
            else
                f.min_obs_grid = {get_or<std::size_t>(j, "min_obs_T", 8, w)};
        }
        f.M = get_or<std::size_t>(j, "M", f.M, w);
        f.error_p0 = get_or(j, "error_p0", f.error_p0, w);
        f.windows = get_or(j, "windows", f.windows, w);
        f.complete_only = get_or(j, "complete_only", f.complete_only, w);
    }

    if (root.contains("frac")) {
        const json& j = root["frac"];
        const std::string w = "frac";
        check_keys(j, {"p0", "I", "J", "statistics", "B", "levels", "mode", "min_obs_T", "upper_bound", "grid_step",
                       "level"},
                   w);
        auto& f = cfg.frac;
        f.test.mode = EffectMode::raw_mean;
        f.test = detail::parse_joint(j, w, f.test);
        f.test.min_obs_T = get_or<std::size_t>(j, "min_obs_T", f.test.min_obs_T, w);
        f.p0 = get_or(j, "p0", f.p0, w);
        f.I = get_or<std::size_t>(j, "I", f.I, w);
        f.J = get_or<std::size_t>(j, "J", f.J, w);
        f.frac.upper_bound = get_or(j, "upper_bound", f.frac.upper_bound, w);
        f.frac.grid_step = get_or(j, "grid_step", f.frac.grid_step, w);
        f.frac.level = get_or(j, "level", f.frac.level, w);
    } else {
        cfg.frac.test.mode = EffectMode::raw_mean;
    }

    if (root.contains("simstudy")) {
        const json& j = root["simstudy"];
        const std::string w = "simstudy";
        check_keys(j, {"true_fraction", "gammas", "periods_per_year", "M", "K", "procedures", "cutoffs", "deltas",
                       "p0_grid", "est_I", "est_J", "min_obs", "max_cost", "rsw"},
                   w);
        auto& s = cfg.simstudy;
        s.true_fraction = get_or(j, "true_fraction", s.true_fraction, w);
        if (j.contains("gammas")) {
            s.gammas.clear();
            for (const auto& g : j["gammas"]) {
                check_keys(g, {"mu0", "sigma0"}, w + ".gammas[]");
                s.gammas.push_back({get_or<double>(g, "mu0", 0.05, w), get_or<double>(g, "sigma0", 0.0, w)});
            }
        }
        s.periods_per_year = get_or(j, "periods_per_year", s.periods_per_year, w);
        s.M = get_or<std::size_t>(j, "M", s.M, w);
        s.K = get_or<std::size_t>(j, "K", s.K, w);
        if (j.contains("procedures"))
            s.procedures = detail::parse_procedures(j, w);
        s.cutoffs = get_or(j, "cutoffs", s.cutoffs, w);
        s.deltas = get_or(j, "deltas", s.deltas, w);
        s.p0_grid = get_or(j, "p0_grid", s.p0_grid, w);
        s.est_I = get_or<std::size_t>(j, "est_I", s.est_I, w);
        s.est_J = get_or<std::size_t>(j, "est_J", s.est_J, w);
        s.min_obs = get_or<std::size_t>(j, "min_obs", s.min_obs, w);
        s.max_cost = get_or(j, "max_cost", s.max_cost, w);
        if (j.contains("rsw"))
            s.rsw = detail::parse_rsw(j["rsw"], w + ".rsw");
    }

    if (root.contains("synthetic")) {
        const json& j = root["synthetic"];
        const std::string w = "synthetic";
        check_keys(j, {"D", "N", "correlation", "vol", "signal_fraction", "signal_mean", "K", "factor_mean",
                       "factor_vol", "short_funds", "short_min_obs", "short_max_obs", "short_missing_prob",
                       "start_year", "start_month"},
                   w);
        auto& s = cfg.synthetic;
        s.D = get_or<std::size_t>(j, "D", s.D, w);
        s.N = get_or<std::size_t>(j, "N", s.N, w);
        s.correlation = get_or(j, "correlation", s.correlation, w);
        s.vol = get_or(j, "vol", s.vol, w);
        s.signal_fraction = get_or(j, "signal_fraction", s.signal_fraction, w);
        s.signal_mean = get_or(j, "signal_mean", s.signal_mean, w);
        s.K = get_or<std::size_t>(j, "K", s.K, w);
        s.factor_mean = get_or(j, "factor_mean", s.factor_mean, w);
        s.factor_vol = get_or(j, "factor_vol", s.factor_vol, w);
        s.short_funds = get_or<std::size_t>(j, "short_funds", s.short_funds, w);
        s.short_min_obs = get_or<std::size_t>(j, "short_min_obs", s.short_min_obs, w);
        s.short_max_obs = get_or<std::size_t>(j, "short_max_obs", s.short_max_obs, w);
        s.short_missing_prob = get_or(j, "short_missing_prob", s.short_missing_prob, w);
        s.start_year = get_or(j, "start_year", s.start_year, w);
        s.start_month = get_or(j, "start_month", s.start_month, w);
    }
    return cfg;
}

inline RunConfig load(const std::filesystem::path& path)
{
    json root;
    try {
        root = json::parse(io::read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorKind::Config, path.string() + ": " + e.what());
    } catch (const Error& e) {
        fail(ErrorKind::Config, e.what());
    }
    return parse(root);
}

} // namespace mtcal::config
