#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "mtcal/panel.hpp"

namespace mtcal::test {

// Period labels "0001", "0002", ... sort numerically and lexically alike.
inline std::vector<std::string> labels(std::size_t d)
{
    std::vector<std::string> out(d);
    for (std::size_t r = 0; r < d; ++r) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%04zu", r + 1);
        out[r] = buf;
    }
    return out;
}

inline std::vector<std::string> names(std::size_t n, const char* prefix = "c")
{
    std::vector<std::string> out(n);
    for (std::size_t c = 0; c < n; ++c)
        out[c] = prefix + std::to_string(c);
    return out;
}

/// Columns given as vectors; NaN entries become missing cells.
inline ReturnPanel panel_from_columns(const std::vector<std::vector<double>>& cols)
{
    const std::size_t d = cols.front().size();
    std::vector<double> v;
    std::vector<std::uint8_t> m;
    for (const auto& col : cols) {
        for (double x : col) {
            m.push_back(std::isnan(x) ? 0 : 1);
            v.push_back(std::isnan(x) ? 0.0 : x);
        }
    }
    return ReturnPanel(labels(d), names(cols.size()), v, m);
}

/// Gaussian columns with per-column means, optional common component and missing cells.
struct Gen {
    std::mt19937_64 eng;
    explicit Gen(std::uint64_t seed) : eng(seed) {}

    double normal()
    {
        std::normal_distribution<double> z;
        return z(eng);
    }
    double uniform(double lo = 0.0, double hi = 1.0)
    {
        std::uniform_real_distribution<double> u(lo, hi);
        return u(eng);
    }
    std::size_t index(std::size_t n)
    {
        std::uniform_int_distribution<std::size_t> u(0, n - 1);
        return u(eng);
    }

    ReturnPanel panel(std::size_t d, std::size_t n, double vol = 0.05, const std::vector<double>& means = {},
                      double missing = 0.0)
    {
        std::vector<std::vector<double>> cols(n, std::vector<double>(d));
        for (std::size_t c = 0; c < n; ++c) {
            for (std::size_t r = 0; r < d; ++r) {
                const double mu = means.empty() ? 0.0 : means[c];
                cols[c][r] = mu + vol * normal();
                if (missing > 0.0 && uniform() < missing && r > 1)
                    cols[c][r] = std::nan("");
            }
        }
        return panel_from_columns(cols);
    }

    FactorPanel factors(std::size_t d, std::size_t k, double vol = 0.04)
    {
        std::vector<double> v(d * k);
        for (auto& x : v)
            x = 0.005 + vol * normal();
        return FactorPanel(labels(d), names(k, "F"), v);
    }

    std::vector<double> pvalues(std::size_t n)
    {
        std::vector<double> p(n);
        for (auto& x : p) {
            // mix of small and uniform values, with ties
            const double u = uniform();
            x = u < 0.3 ? uniform(0.0, 0.02) : (u < 0.4 ? 0.01 : uniform());
        }
        return p;
    }
};

} // namespace mtcal::test

namespace mtcal::test {

/// Step-up set found by enumerating subsets: the largest S with S == {i : p_i <= |S| * level / N}.
inline std::vector<std::uint8_t> self_consistent_step_up(const std::vector<double>& p, double level)
{
    const std::size_t n = p.size();
    std::vector<std::uint8_t> best(n, 0);
    std::size_t best_size = 0;
    for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
        const std::size_t size = static_cast<std::size_t>(__builtin_popcount(mask));
        if (size <= best_size)
            continue;
        const double cut = static_cast<double>(size) * level / static_cast<double>(n);
        bool consistent = true;
        for (std::size_t i = 0; i < n && consistent; ++i)
            consistent = ((mask >> i) & 1u) == (p[i] <= cut ? 1u : 0u);
        if (consistent) {
            best_size = size;
            for (std::size_t i = 0; i < n; ++i)
                best[i] = (mask >> i) & 1u;
        }
    }
    return best;
}

} // namespace mtcal::test
