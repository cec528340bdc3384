#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mtcal/calibrate.hpp"
#include "mtcal/error.hpp"
#include "mtcal/ffjoint.hpp"
#include "mtcal/fingerprint.hpp"
#include "mtcal/panel.hpp"
#include "mtcal/rates.hpp"
#include "mtcal/resample.hpp"
#include "mtcal/simstudy.hpp"

namespace mtcal::io {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "1.0.0";
inline constexpr const char* kReportSchema = "mtcal.error_rate_report/1";
inline constexpr const char* kNullMarker = "NA";

/// %.17g, which round-trips every finite double; NaN becomes the null marker.
inline std::string fmt_double(double v)
{
    if (std::isnan(v))
        return kNullMarker;
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out)
        fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_fingerprint(const std::filesystem::path& path)
{
    const std::string bytes = read_text(path);
    Fnv1a h;
    h.bytes(bytes.data(), bytes.size());
    return h.hex();
}

// ---------------------------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------------------------

/// Splits one CSV record; double-quoted fields may contain commas and doubled quotes.
inline std::vector<std::string> split_csv_line(const std::string& line, std::size_t row)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (quoted)
        fail(ErrorKind::ParseError, "row " + std::to_string(row) + ": unterminated quoted field");
    out.push_back(std::move(cur));
    return out;
}

inline std::string csv_field(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"')
            out += "\"\"";
        else
            out.push_back(ch);
    }
    return out + "\"";
}

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
};

inline CsvTable parse_csv(const std::string& text, const std::string& what)
{
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (trim(line).empty())
            continue;
        auto fields = split_csv_line(line, lineno);
        for (auto& f : fields)
            f = trim(f);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size())
            fail(ErrorKind::ParseError, what + ": row " + std::to_string(lineno) + ": expected " +
                                            std::to_string(t.header.size()) + " fields, found " +
                                            std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(lineno);
    }
    if (t.header.empty())
        fail(ErrorKind::ParseError, what + ": no header row");
    return t;
}

inline CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path), path.string()); }

namespace detail {

inline void check_header(const CsvTable& t, const std::string& what)
{
    if (t.header.size() < 2)
        fail(ErrorKind::ParseError, what + ": header needs a period column and at least one data column");
    std::unordered_set<std::string> seen;
    for (std::size_t c = 1; c < t.header.size(); ++c) {
        if (t.header[c].empty())
            fail(ErrorKind::ParseError, what + ": row 1, column " + std::to_string(c + 1) + ": empty name");
        if (!seen.insert(t.header[c]).second)
            fail(ErrorKind::DuplicateIdentifier, what + ": duplicate column name '" + t.header[c] + "' at column " +
                                                     std::to_string(c + 1));
    }
}

inline std::vector<std::string> period_labels(const CsvTable& t, const std::string& what)
{
    std::vector<std::string> labels;
    std::unordered_set<std::string> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string& l = t.rows[r][0];
        const std::string where = what + ": row " + std::to_string(t.line_numbers[r]) + ", column 1";
        if (l.empty())
            fail(ErrorKind::ParseError, where + ": empty period label");
        if (!seen.insert(l).second)
            fail(ErrorKind::DuplicateIdentifier, where + ": duplicate period '" + l + "'");
        if (!labels.empty() && !period_label_less(labels.back(), l))
            fail(ErrorKind::ParseError, where + ": period '" + l + "' is not after '" + labels.back() + "'");
        labels.push_back(l);
    }
    if (labels.size() < 2)
        fail(ErrorKind::ParseError, what + ": at least two periods are required");
    return labels;
}

inline bool is_missing(const std::string& s) { return s.empty() || s == kNullMarker; }

inline double parse_cell(const CsvTable& t, std::size_t r, std::size_t c, const std::string& what)
{
    const std::string& s = t.rows[r][c];
    double v = 0.0;
    if (!mtcal::detail::parse_double(s, v) || !std::isfinite(v))
        fail(ErrorKind::ParseError, what + ": row " + std::to_string(t.line_numbers[r]) + ", column " +
                                        std::to_string(c + 1) + " ('" + t.header[c] + "'): cannot parse '" + s +
                                        "' as a number");
    return v;
}

} // namespace detail

/// Header row = period column name then strategy names; first column = period label; empty or
/// "NA" cells are missing. Returns are decimal (0.01 = 1%).
inline ReturnPanel parse_panel(const std::string& text, const std::string& what = "panel")
{
    const CsvTable t = parse_csv(text, what);
    detail::check_header(t, what);
    auto labels = detail::period_labels(t, what);
    const std::size_t d = labels.size();
    const std::size_t n = t.header.size() - 1;
    std::vector<double> values(d * n, 0.0);
    std::vector<std::uint8_t> mask(d * n, 0);
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            if (detail::is_missing(t.rows[r][c + 1]))
                continue;
            values[c * d + r] = detail::parse_cell(t, r, c + 1, what);
            mask[c * d + r] = 1;
        }
    }
    for (std::size_t c = 0; c < n; ++c) {
        bool any = false;
        for (std::size_t r = 0; r < d && !any; ++r)
            any = mask[c * d + r] != 0;
        if (!any)
            fail(ErrorKind::ParseError, what + ": column " + std::to_string(c + 2) + " ('" + t.header[c + 1] +
                                            "') has no observed returns");
    }
    std::vector<std::string> names(t.header.begin() + 1, t.header.end());
    return ReturnPanel(std::move(labels), std::move(names), std::move(values), std::move(mask));
}

inline ReturnPanel load_panel(const std::filesystem::path& path)
{
    return parse_panel(read_text(path), path.string());
}

inline std::string format_panel(const ReturnPanel& panel, const std::string& period_header = "period")
{
    std::string out = csv_field(period_header);
    for (const auto& n : panel.names())
        out += "," + csv_field(n);
    out += "\n";
    for (std::size_t r = 0; r < panel.periods(); ++r) {
        out += csv_field(panel.period_labels()[r]);
        for (std::size_t c = 0; c < panel.strategies(); ++c) {
            out += ",";
            if (panel.observed(r, c))
                out += fmt_double(panel.at(r, c));
        }
        out += "\n";
    }
    return out;
}

inline void write_panel(const ReturnPanel& panel, const std::filesystem::path& path)
{
    write_text(path, format_panel(panel));
}

inline FactorPanel parse_factors(const std::string& text, const std::string& what = "factors")
{
    const CsvTable t = parse_csv(text, what);
    detail::check_header(t, what);
    auto labels = detail::period_labels(t, what);
    const std::size_t k = t.header.size() - 1;
    std::vector<double> values;
    values.reserve(labels.size() * k);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        for (std::size_t c = 1; c <= k; ++c) {
            if (detail::is_missing(t.rows[r][c]))
                fail(ErrorKind::ParseError, what + ": row " + std::to_string(t.line_numbers[r]) + ", column " +
                                                std::to_string(c + 1) + ": factor values may not be missing");
            values.push_back(detail::parse_cell(t, r, c, what));
        }
    }
    std::vector<std::string> names(t.header.begin() + 1, t.header.end());
    return FactorPanel(std::move(labels), std::move(names), std::move(values));
}

inline FactorPanel load_factors(const std::filesystem::path& path)
{
    return parse_factors(read_text(path), path.string());
}

inline std::string format_factors(const FactorPanel& f)
{
    std::string out = "period";
    for (const auto& n : f.names())
        out += "," + csv_field(n);
    out += "\n";
    for (std::size_t r = 0; r < f.periods(); ++r) {
        out += csv_field(f.period_labels()[r]);
        for (double v : f.row(r))
            out += "," + fmt_double(v);
        out += "\n";
    }
    return out;
}

/// Truth sidecar: one row per strategy with its label and per-period injected mean.
struct TruthTable {
    std::vector<std::string> names;
    std::vector<std::uint8_t> truth;
    std::vector<double> effect;
};

inline std::string format_truth(const TruthTable& t)
{
    std::string out = "name,truth,effect\n";
    for (std::size_t i = 0; i < t.names.size(); ++i)
        out += csv_field(t.names[i]) + "," + (t.truth[i] ? "1" : "0") + "," + fmt_double(t.effect[i]) + "\n";
    return out;
}

inline TruthTable load_truth(const std::filesystem::path& path)
{
    const CsvTable t = read_csv(path);
    if (t.header != std::vector<std::string>{"name", "truth", "effect"})
        fail(ErrorKind::ParseError, path.string() + ": expected header name,truth,effect");
    TruthTable out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        out.names.push_back(t.rows[r][0]);
        if (t.rows[r][1] != "0" && t.rows[r][1] != "1")
            fail(ErrorKind::ParseError, path.string() + ": row " + std::to_string(t.line_numbers[r]) +
                                            ", column 2: truth must be 0 or 1");
        out.truth.push_back(t.rows[r][1] == "1" ? 1 : 0);
        out.effect.push_back(detail::parse_cell(t, r, 2, path.string()));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Synthetic panels
// ---------------------------------------------------------------------------------------------

/// Standard normal by Box-Muller on the library's portable uniforms.
class NormalSource {
public:
    explicit NormalSource(std::uint64_t seed) : eng_(seed) {}

    double operator()()
    {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform01(eng_);
        while (u1 == 0.0)
            u1 = uniform01(eng_);
        const double u2 = uniform01(eng_);
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    Engine& engine() noexcept { return eng_; }

private:
    Engine eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct SyntheticSpec {
    std::size_t D = 240;
    std::size_t N = 200;
    /// Pairwise correlation induced by a common latent component.
    double correlation = 0.0;
    /// Per-period idiosyncratic volatility.
    double vol = 0.05;
    /// Fraction of strategies with a nonzero mean, and that per-period mean.
    double signal_fraction = 0.0;
    double signal_mean = 0.0;
    /// Benchmark factors: returns load on K factors with N(factor_mean, factor_vol) draws.
    std::size_t K = 0;
    double factor_mean = 0.005;
    double factor_vol = 0.04;
    /// Extra strategies with short histories and scattered missing months.
    std::size_t short_funds = 0;
    std::size_t short_min_obs = 8;
    std::size_t short_max_obs = 24;
    double short_missing_prob = 0.0;
    int start_year = 1984;
    int start_month = 1;
};

struct SyntheticData {
    ReturnPanel panel;
    TruthTable truth;
    std::optional<FactorPanel> factors;
};

inline std::vector<std::string> monthly_labels(int year, int month, std::size_t d)
{
    std::vector<std::string> out;
    out.reserve(d);
    for (std::size_t r = 0; r < d; ++r) {
        const int m0 = (month - 1) + static_cast<int>(r);
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02d", year + m0 / 12, m0 % 12 + 1);
        out.emplace_back(buf);
    }
    return out;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed)
{
    if (spec.D < 2 || spec.N + spec.short_funds < 1)
        fail(ErrorKind::InvalidArgument, "synthetic panel needs D >= 2 and at least one strategy");
    if (!(spec.correlation >= 0.0 && spec.correlation < 1.0))
        fail(ErrorKind::InvalidArgument, "correlation must lie in [0, 1)");
    if (!(spec.signal_fraction >= 0.0 && spec.signal_fraction < 1.0))
        fail(ErrorKind::InvalidArgument, "signal_fraction must lie in [0, 1)");
    if (spec.short_funds > 0 && (spec.short_min_obs < 1 || spec.short_max_obs < spec.short_min_obs ||
                                 spec.short_max_obs > spec.D))
        fail(ErrorKind::InvalidArgument, "short-history bounds must satisfy 1 <= min <= max <= D");
    if (!(spec.short_missing_prob >= 0.0 && spec.short_missing_prob < 1.0))
        fail(ErrorKind::InvalidArgument, "short_missing_prob must lie in [0, 1)");
    const std::size_t d = spec.D;
    const std::size_t n = spec.N + spec.short_funds;
    const auto labels = monthly_labels(spec.start_year, spec.start_month, d);

    NormalSource common(derive_seed(seed, Stage::synthetic, 0));
    std::vector<double> z(d);
    for (auto& v : z)
        v = common();
    std::optional<FactorPanel> factors;
    std::vector<double> fv;
    if (spec.K > 0) {
        NormalSource fs(derive_seed(seed, Stage::synthetic, 1));
        fv.resize(d * spec.K);
        for (auto& v : fv)
            v = spec.factor_mean + spec.factor_vol * fs();
        std::vector<std::string> names;
        for (std::size_t k = 0; k < spec.K; ++k)
            names.push_back("F" + std::to_string(k + 1));
        factors = FactorPanel(labels, names, fv);
    }

    Engine pick(derive_seed(seed, Stage::synthetic, 2));
    const std::size_t n_signal = true_count(spec.signal_fraction, spec.N);
    const auto signal_cols = sample_without_replacement(pick, spec.N, n_signal);

    SyntheticData out;
    std::vector<std::string> names(n);
    std::vector<double> values(d * n, 0.0);
    std::vector<std::uint8_t> mask(d * n, 1);
    out.truth.truth.assign(n, 0);
    out.truth.effect.assign(n, 0.0);
    for (std::size_t a = 0; a < n_signal; ++a) {
        out.truth.truth[signal_cols[a]] = 1;
        out.truth.effect[signal_cols[a]] = spec.signal_mean;
    }
    const double load = std::sqrt(spec.correlation);
    const double idio = std::sqrt(1.0 - spec.correlation);
    for (std::size_t c = 0; c < n; ++c) {
        char buf[32];
        std::snprintf(buf, sizeof buf, c < spec.N ? "S%04zu" : "H%04zu", c < spec.N ? c + 1 : c - spec.N + 1);
        names[c] = buf;
        NormalSource eps(derive_seed(seed, Stage::synthetic, 3, c));
        std::vector<double> beta(spec.K);
        for (std::size_t k = 0; k < spec.K; ++k)
            beta[k] = k == 0 ? 1.0 + 0.3 * eps() : 0.3 * eps();
        for (std::size_t r = 0; r < d; ++r) {
            double v = out.truth.effect[c] + spec.vol * (load * z[r] + idio * eps());
            for (std::size_t k = 0; k < spec.K; ++k)
                v += beta[k] * fv[r * spec.K + k];
            values[c * d + r] = v;
        }
        if (c >= spec.N) {
            Engine hist(derive_seed(seed, Stage::synthetic, 4, c));
            const std::size_t len =
                spec.short_min_obs + static_cast<std::size_t>(bounded(hist, spec.short_max_obs - spec.short_min_obs + 1));
            const std::size_t start = static_cast<std::size_t>(bounded(hist, d - len + 1));
            for (std::size_t r = 0; r < d; ++r) {
                const bool in_window = r >= start && r < start + len;
                const bool hole = in_window && uniform01(hist) < spec.short_missing_prob;
                mask[c * d + r] = in_window && !hole ? 1 : 0;
            }
            bool any = false;
            for (std::size_t r = 0; r < d && !any; ++r)
                any = mask[c * d + r] != 0;
            if (!any)
                mask[c * d + start] = 1;
        }
    }
    out.truth.names = names;
    out.panel = ReturnPanel(labels, std::move(names), std::move(values), std::move(mask));
    out.factors = std::move(factors);
    return out;
}

/// Writes panel.csv, truth.csv and (with factors) factors.csv into `dir`.
inline void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir)
{
    write_text(dir / "panel.csv", format_panel(data.panel));
    write_text(dir / "truth.csv", format_truth(data.truth));
    if (data.factors)
        write_text(dir / "factors.csv", format_factors(*data.factors));
}

// ---------------------------------------------------------------------------------------------
// Error-rate reports
// ---------------------------------------------------------------------------------------------

inline json num(double v)
{
    if (std::isnan(v))
        return nullptr;
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    return v;
}

inline double from_num(const json& j)
{
    if (j.is_null())
        return std::numeric_limits<double>::quiet_NaN();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
        fail(ErrorKind::ParseError, "unexpected string '" + s + "' where a number was expected");
    }
    return j.get<double>();
}

inline json num_array(const std::vector<double>& v)
{
    json a = json::array();
    for (double x : v)
        a.push_back(num(x));
    return a;
}

inline std::vector<double> from_num_array(const json& j)
{
    std::vector<double> out;
    for (const auto& x : j)
        out.push_back(from_num(x));
    return out;
}

inline json to_json(const RateSummary& r) { return {{"mean", num(r.mean)}, {"se", num(r.se)}}; }

inline RateSummary rate_from_json(const json& j) { return {from_num(j.at("mean")), from_num(j.at("se"))}; }

inline json to_json(const Provenance& p)
{
    return {{"seed", p.seed},
            {"I", p.I},
            {"J", p.J},
            {"p0_grid", num_array(p.p0_grid)},
            {"alpha_grid", num_array(p.alpha_grid)},
            {"cutoff_grid", num_array(p.cutoff_grid)},
            {"procedures", p.procedures},
            {"mode", p.mode},
            {"sidedness", p.sidedness},
            {"min_obs", p.min_obs},
            {"periods", p.periods},
            {"strategies", p.strategies},
            {"dropped", p.dropped},
            {"data_fingerprint", p.data_fingerprint},
            {"factor_fingerprint", p.factor_fingerprint},
            {"rsw_variant", p.rsw_variant}};
}

inline Provenance provenance_from_json(const json& j)
{
    Provenance p;
    p.seed = j.at("seed").get<std::uint64_t>();
    p.I = j.at("I").get<std::size_t>();
    p.J = j.at("J").get<std::size_t>();
    p.p0_grid = from_num_array(j.at("p0_grid"));
    p.alpha_grid = from_num_array(j.at("alpha_grid"));
    p.cutoff_grid = from_num_array(j.at("cutoff_grid"));
    p.procedures = j.at("procedures").get<std::vector<std::string>>();
    p.mode = j.at("mode").get<std::string>();
    p.sidedness = j.at("sidedness").get<std::string>();
    p.min_obs = j.at("min_obs").get<std::size_t>();
    p.periods = j.at("periods").get<std::size_t>();
    p.strategies = j.at("strategies").get<std::size_t>();
    p.dropped = j.at("dropped").get<std::vector<std::string>>();
    p.data_fingerprint = j.at("data_fingerprint").get<std::string>();
    p.factor_fingerprint = j.at("factor_fingerprint").get<std::string>();
    p.rsw_variant = j.at("rsw_variant").get<std::string>();
    return p;
}

inline json to_json(const ErrorRateCell& c)
{
    json j = {{"p0", num(c.p0)},         {"method", c.method},   {"level", num(c.level)},
              {"valid", c.valid},        {"error", c.error},     {"I", c.I},
              {"J", c.J},                {"type1", to_json(c.type1)}, {"type2", to_json(c.type2)},
              {"oratio", to_json(c.oratio)}, {"tpr", to_json(c.tpr)}, {"fpr", to_json(c.fpr)}};
    j["cutoff"] = c.cutoff ? num(*c.cutoff) : json(nullptr);
    j["attained"] = c.attained ? json(*c.attained) : json(nullptr);
    return j;
}

inline ErrorRateCell cell_from_json(const json& j)
{
    ErrorRateCell c;
    c.p0 = from_num(j.at("p0"));
    c.method = j.at("method").get<std::string>();
    c.level = from_num(j.at("level"));
    c.valid = j.at("valid").get<bool>();
    c.error = j.at("error").get<std::string>();
    c.I = j.at("I").get<std::size_t>();
    c.J = j.at("J").get<std::size_t>();
    c.type1 = rate_from_json(j.at("type1"));
    c.type2 = rate_from_json(j.at("type2"));
    c.oratio = rate_from_json(j.at("oratio"));
    c.tpr = rate_from_json(j.at("tpr"));
    c.fpr = rate_from_json(j.at("fpr"));
    if (!j.at("cutoff").is_null())
        c.cutoff = from_num(j.at("cutoff"));
    if (!j.at("attained").is_null())
        c.attained = j.at("attained").get<bool>();
    return c;
}

inline json to_json(const ErrorRateReport& r)
{
    json cells = json::array();
    for (const auto& c : r.cells)
        cells.push_back(to_json(c));
    return {{"schema", kReportSchema}, {"provenance", to_json(r.provenance)}, {"cells", cells}};
}

inline ErrorRateReport report_from_json(const json& j)
{
    if (j.value("schema", "") != kReportSchema)
        fail(ErrorKind::ParseError, "not an error-rate report (schema mismatch)");
    ErrorRateReport r;
    r.provenance = provenance_from_json(j.at("provenance"));
    for (const auto& c : j.at("cells"))
        r.cells.push_back(cell_from_json(c));
    return r;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

/// Flat table, one row per cell; invalid cells carry the null marker in every rate column.
inline std::string report_csv(const ErrorRateReport& r)
{
    std::string out = "p0,method,level,valid,I,J,type1,type1_se,type2,type2_se,oratio,oratio_se,tpr,tpr_se,fpr,"
                      "fpr_se,cutoff,attained,error\n";
    for (const auto& c : r.cells) {
        out += fmt_double(c.p0) + "," + csv_field(c.method) + "," + fmt_double(c.level) + "," +
               (c.valid ? "1" : "0") + "," + std::to_string(c.I) + "," + std::to_string(c.J);
        for (const RateSummary* s : {&c.type1, &c.type2, &c.oratio, &c.tpr, &c.fpr})
            out += "," + (c.valid ? fmt_double(s->mean) : kNullMarker) + "," +
                   (c.valid ? fmt_double(s->se) : kNullMarker);
        out += "," + (c.cutoff ? fmt_double(*c.cutoff) : std::string(kNullMarker));
        out += "," + (c.attained ? std::string(*c.attained ? "1" : "0") : std::string(kNullMarker));
        out += "," + csv_field(c.error) + "\n";
    }
    return out;
}

/// Error-rate-vs-cutoff curves for every p0 (one row per fixed-cutoff cell).
inline std::string plot_error_vs_cutoff(const ErrorRateReport& r)
{
    std::string out = "p0,cutoff,type1,type2,oratio,tpr,fpr\n";
    for (const auto& c : r.cells) {
        if (c.method != kCutoffMethod)
            continue;
        out += fmt_double(c.p0) + "," + fmt_double(c.level);
        for (const RateSummary* s : {&c.type1, &c.type2, &c.oratio, &c.tpr, &c.fpr})
            out += "," + (c.valid ? fmt_double(s->mean) : kNullMarker);
        out += "\n";
    }
    return out;
}

/// ROC per p0 from the fixed-cutoff cells, bracketed by (1,1) at -inf and (0,0) at +inf.
inline std::string plot_roc(const ErrorRateReport& r)
{
    std::string out = "p0,cutoff,fpr,tpr\n";
    for (double p0 : r.provenance.p0_grid) {
        out += fmt_double(p0) + ",-inf,1,1\n";
        for (const auto& c : r.cells) {
            if (c.method != kCutoffMethod || c.p0 != p0)
                continue;
            out += fmt_double(p0) + "," + fmt_double(c.level) + "," +
                   (c.valid ? fmt_double(c.fpr.mean) : kNullMarker) + "," +
                   (c.valid ? fmt_double(c.tpr.mean) : kNullMarker) + "\n";
        }
        out += fmt_double(p0) + ",inf,0,0\n";
    }
    return out;
}

inline std::string plot_roc(std::span<const RocPoint> points)
{
    std::string out = "cutoff,fpr,tpr\n";
    for (const auto& p : points)
        out += fmt_double(p.cutoff) + "," + fmt_double(p.fpr) + "," + fmt_double(p.tpr) + "\n";
    return out;
}

inline std::string plot_cutoff_vs_p0(std::span<const CutoffSolution> sols)
{
    std::string out = "target,p0,t_star,achieved_type1,type1_se,attained\n";
    for (const auto& s : sols)
        out += fmt_double(s.target) + "," + fmt_double(s.p0) + "," + fmt_double(s.choice.t_star) + "," +
               fmt_double(s.choice.achieved_type1) + "," + fmt_double(s.choice.type1_se) + "," +
               (s.choice.attained ? "1" : "0") + "\n";
    return out;
}

inline json to_json(const CutoffSolution& s)
{
    return {{"p0", num(s.p0)},
            {"target", num(s.target)},
            {"t_star", num(s.choice.t_star)},
            {"achieved_type1", num(s.choice.achieved_type1)},
            {"type1_se", num(s.choice.type1_se)},
            {"attained", s.choice.attained},
            {"grid", num_array(s.grid)},
            {"type1", num_array(s.type1)},
            {"type1_se_curve", num_array(s.type1_se)}};
}

// ---------------------------------------------------------------------------------------------
// Calibration checkpoints: one JSON line per outer iteration.
// ---------------------------------------------------------------------------------------------

inline json to_json(std::size_t i, const OuterTally& t)
{
    json cells = json::array();
    for (const auto& c : t) {
        json sums = json::array();
        for (double s : c.sum)
            sums.push_back(num(s));
        cells.push_back({{"valid", c.valid}, {"error", c.error}, {"sum", sums}, {"count", c.count}});
    }
    return {{"i", i}, {"cells", cells}};
}

inline std::pair<std::size_t, OuterTally> tally_from_json(const json& j)
{
    OuterTally t;
    for (const auto& c : j.at("cells")) {
        CellTally ct;
        ct.valid = c.at("valid").get<bool>();
        ct.error = c.at("error").get<std::string>();
        const auto sums = from_num_array(c.at("sum"));
        if (sums.size() != 5)
            fail(ErrorKind::ParseError, "checkpoint cell has the wrong number of sums");
        std::copy(sums.begin(), sums.end(), ct.sum);
        ct.count = c.at("count").get<std::size_t>();
        t.push_back(std::move(ct));
    }
    return {j.at("i").get<std::size_t>(), std::move(t)};
}

// ---------------------------------------------------------------------------------------------
// Joint test, Frac and simulation outputs
// ---------------------------------------------------------------------------------------------

inline json to_json(const JointTestResult& r)
{
    json stats = json::array();
    for (const auto& s : r.stats)
        stats.push_back({{"statistic", s.spec.label()}, {"observed", num(s.observed)}, {"p_value", num(s.p_value)},
                         {"B", s.B}});
    return {{"funds", r.funds}, {"filtered", r.filtered}, {"statistics", stats}};
}

/// One row per test with observed statistic and p-value columns per statistic.
inline std::string joint_test_csv(std::span<const std::string> row_labels, std::span<const JointTestResult> results)
{
    if (results.empty())
        return "";
    std::string out = "sample,funds";
    for (const auto& s : results.front().stats)
        out += "," + s.spec.label() + "," + s.spec.label() + "_p";
    out += "\n";
    for (std::size_t k = 0; k < results.size(); ++k) {
        out += csv_field(row_labels[k]) + "," + std::to_string(results[k].funds);
        for (const auto& s : results[k].stats)
            out += "," + fmt_double(s.observed) + "," + fmt_double(s.p_value);
        out += "\n";
    }
    return out;
}

inline json to_json(const FfErrorRates& r)
{
    json stats = json::array();
    for (const auto& s : r.stats) {
        stats.push_back({{"statistic", s.spec.label()},
                         {"rejection_rate", num_array(s.rejection_rate)},
                         {"nonrejection_rate", num_array(s.nonrejection_rate)},
                         {"se", num_array(s.se)}});
    }
    json j = {{"p0", num(r.p0)},           {"M", r.M},           {"levels", num_array(r.levels)},
              {"avg_funds", num(r.avg_funds)}, {"statistics", stats}};
    j["avg_effect"] = r.avg_effect ? num(*r.avg_effect) : json(nullptr);
    j["avg_t"] = r.avg_t ? num(*r.avg_t) : json(nullptr);
    return j;
}

/// TYPE1 (p0 = 0) or TYPE2 (p0 > 0) per statistic and level.
inline std::string ff_error_rates_csv(std::span<const FfErrorRates> rows)
{
    std::string out = "p0,level,statistic,error_type,error_rate,rejection_rate,se\n";
    for (const auto& r : rows) {
        for (std::size_t l = 0; l < r.levels.size(); ++l) {
            for (std::size_t s = 0; s < r.stats.size(); ++s) {
                out += fmt_double(r.p0) + "," + fmt_double(r.levels[l]) + "," + r.stats[s].spec.label() + "," +
                       (r.p0 == 0.0 ? "type1" : "type2") + "," + fmt_double(r.error_rate(s, l)) + "," +
                       fmt_double(r.stats[s].rejection_rate[l]) + "," + fmt_double(r.stats[s].se[l]) + "\n";
            }
        }
    }
    return out;
}

inline json to_json(const FracSimulation& f)
{
    return {{"p0", num(f.p0)},
            {"mean_frac", num(f.mean)},
            {"prob_frac_at_least_10pct", num(f.prob_at_least_10pct)},
            {"values", num_array(f.values)}};
}

inline json to_json(const SimRecord& r)
{
    return {{"gamma", r.gamma}, {"m", r.m},           {"k", r.k},        {"method", r.method},
            {"delta", num(r.delta)}, {"actual", num(r.actual)}, {"est", num_array(r.est)}};
}

inline SimRecord sim_record_from_json(const json& j)
{
    SimRecord r;
    r.gamma = j.at("gamma").get<std::size_t>();
    r.m = j.at("m").get<std::size_t>();
    r.k = j.at("k").get<std::size_t>();
    r.method = j.at("method").get<std::string>();
    r.delta = from_num(j.at("delta"));
    r.actual = from_num(j.at("actual"));
    r.est = from_num_array(j.at("est"));
    return r;
}

inline std::string sim_study_csv(const SimStudyReport& r)
{
    std::string out = "method,delta,mu0,sigma0,p0,actual,actual_se,est,est_se,win,count\n";
    for (const auto& c : r.cells)
        out += csv_field(c.method) + "," + fmt_double(c.delta) + "," + fmt_double(c.mu0) + "," +
               fmt_double(c.sigma0) + "," + fmt_double(c.p0) + "," + fmt_double(c.actual) + "," +
               fmt_double(c.actual_se) + "," + fmt_double(c.est) + "," + fmt_double(c.est_se) + "," +
               (c.win ? (*c.win ? "1" : "0") : kNullMarker) + "," + std::to_string(c.count) + "\n";
    return out;
}

inline json to_json(const SimStudyReport& r)
{
    json cells = json::array();
    for (const auto& c : r.cells)
        cells.push_back({{"method", c.method},
                         {"delta", num(c.delta)},
                         {"mu0", num(c.mu0)},
                         {"sigma0", num(c.sigma0)},
                         {"p0", num(c.p0)},
                         {"actual", num(c.actual)},
                         {"actual_se", num(c.actual_se)},
                         {"est", num(c.est)},
                         {"est_se", num(c.est_se)},
                         {"win", c.win ? json(*c.win) : json(nullptr)},
                         {"count", c.count}});
    return {{"M", r.M}, {"K", r.K}, {"seed", r.seed}, {"cells", cells}};
}

// ---------------------------------------------------------------------------------------------
// Provenance manifest
// ---------------------------------------------------------------------------------------------

/// Hash of the canonical (sorted-key) config with run-environment keys removed.
inline json strip_run_keys(json config)
{
    for (const char* key : {"threads", "checkpoint", "out_dir"})
        config.erase(key);
    return config;
}

inline std::string config_hash(json config)
{
    config = strip_run_keys(std::move(config));
    const nlohmann::json canonical = nlohmann::json::parse(config.dump());
    Fnv1a h;
    h.str(canonical.dump());
    return h.hex();
}

inline json manifest(const std::string& command, const json& config, std::uint64_t seed,
                     const std::vector<std::pair<std::string, std::filesystem::path>>& inputs,
                     const std::vector<std::string>& outputs)
{
    json in = json::object();
    for (const auto& [role, path] : inputs)
        in[role] = {{"path", path.filename().string()}, {"fingerprint", file_fingerprint(path)}};
    return {{"schema", "mtcal.manifest/1"},
            {"version", kVersion},
            {"command", command},
            {"config_hash", config_hash(config)},
            {"seed", seed},
            {"inputs", in},
            {"outputs", outputs},
            {"config", strip_run_keys(config)}};
}

} // namespace mtcal::io
