#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtcal/error.hpp"
#include "mtcal/panel.hpp"

namespace mtcal {

/// Independent random streams. Every random quantity in the library is keyed on
/// (master seed, stage, coordinates) so results never depend on scheduling.
enum class Stage : std::uint64_t {
    outer = 1,
    inner = 2,
    rsw = 3,
    perturb = 4,
    joint_test = 5,
    population = 6,
    sim_perturb = 7,
    subsample = 8,
    synthetic = 9,
    estimate = 10,
};

inline const char* to_string(Stage stage) noexcept
{
    switch (stage) {
    case Stage::outer: return "outer";
    case Stage::inner: return "inner";
    case Stage::rsw: return "rsw";
    case Stage::perturb: return "perturb";
    case Stage::joint_test: return "joint_test";
    case Stage::population: return "population";
    case Stage::sim_perturb: return "sim_perturb";
    case Stage::subsample: return "subsample";
    case Stage::synthetic: return "synthetic";
    case Stage::estimate: return "estimate";
    }
    return "unknown";
}

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Pure function of its arguments; distinct tuples give unrelated seeds.
inline constexpr std::uint64_t derive_seed(std::uint64_t master, Stage stage, std::uint64_t i = 0,
                                           std::uint64_t j = 0, std::uint64_t k = 0) noexcept
{
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ static_cast<std::uint64_t>(stage));
    h = splitmix64(h ^ i);
    h = splitmix64(h ^ (j + 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ (k + 0x8cb92ba72f3d8dd7ULL));
    return h;
}

using Engine = std::mt19937_64;

/// Unbiased integer in [0, n) (Lemire's multiply-and-reject). Unlike
/// std::uniform_int_distribution the sequence is identical across standard libraries.
inline std::uint64_t bounded(Engine& eng, std::uint64_t n)
{
    if (n <= 1)
        return 0;
    std::uint64_t x = eng();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = eng();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& eng) { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

/// Fisher-Yates choice of k distinct indices from [0, n), returned in ascending order.
inline std::vector<std::size_t> sample_without_replacement(Engine& eng, std::size_t n, std::size_t k)
{
    if (k > n)
        fail(ErrorKind::InvalidArgument, "cannot sample more items than available");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i)
        pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const auto r = i + static_cast<std::size_t>(bounded(eng, n - i));
        std::swap(pool[i], pool[r]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

struct BootstrapPlan {
    std::uint64_t master_seed = 0;
    std::size_t I = 1;
    std::size_t J = 1;
    std::size_t D = 1;

    void validate() const
    {
        if (I < 1 || J < 1)
            fail(ErrorKind::InvalidArgument, "bootstrap plan needs I >= 1 and J >= 1");
        if (D < 1)
            fail(ErrorKind::InvalidArgument, "bootstrap plan needs D >= 1");
    }
};

/// Row indices drawn i.i.d. uniformly with replacement, shared by every column.
struct IndexDraw {
    std::vector<std::size_t> indices;

    [[nodiscard]] std::size_t size() const noexcept { return indices.size(); }
    bool operator==(const IndexDraw&) const = default;

    static IndexDraw identity(std::size_t d)
    {
        IndexDraw draw;
        draw.indices.resize(d);
        for (std::size_t r = 0; r < d; ++r)
            draw.indices[r] = r;
        return draw;
    }
};

inline IndexDraw draw_indices(std::uint64_t seed, std::size_t d)
{
    Engine eng(seed);
    IndexDraw draw;
    draw.indices.resize(d);
    for (auto& idx : draw.indices)
        idx = static_cast<std::size_t>(bounded(eng, d));
    return draw;
}

inline IndexDraw draw_indices(const BootstrapPlan& plan, Stage stage, std::size_t i, std::size_t j)
{
    plan.validate();
    if (i >= plan.I)
        fail(ErrorKind::OutOfRange, "outer index " + std::to_string(i) + " outside [0, " + std::to_string(plan.I) + ")");
    if (stage != Stage::outer && j >= plan.J)
        fail(ErrorKind::OutOfRange, "inner index " + std::to_string(j) + " outside [0, " + std::to_string(plan.J) + ")");
    return draw_indices(derive_seed(plan.master_seed, stage, i, j), plan.D);
}

/// Row multiplicities of a draw: weights[r] = #{s : indices[s] == r}.
inline std::vector<std::uint32_t> multiplicities(const IndexDraw& draw, std::size_t d)
{
    std::vector<std::uint32_t> w(d, 0);
    for (std::size_t idx : draw.indices) {
        if (idx >= d)
            fail(ErrorKind::OutOfRange, "draw index outside the panel");
        ++w[idx];
    }
    return w;
}

/// (a o b)[r] = a[b[r]], so apply_draw(apply_draw(P, a), b) == apply_draw(P, compose(a, b)).
inline IndexDraw compose(const IndexDraw& a, const IndexDraw& b)
{
    IndexDraw out;
    out.indices.resize(b.size());
    for (std::size_t r = 0; r < b.size(); ++r) {
        if (b.indices[r] >= a.size())
            fail(ErrorKind::OutOfRange, "compose: index outside the first draw");
        out.indices[r] = a.indices[b.indices[r]];
    }
    return out;
}

/// Row r of the result is row indices[r] of the input. Period labels stay positional.
inline ReturnPanel apply_draw(const ReturnPanel& panel, const IndexDraw& draw)
{
    const std::size_t d = panel.periods();
    if (draw.size() != d)
        fail(ErrorKind::LengthMismatch, "draw length " + std::to_string(draw.size()) + " differs from D = " +
                                            std::to_string(d));
    std::vector<double> values(d * panel.strategies());
    std::vector<std::uint8_t> mask(d * panel.strategies());
    for (std::size_t c = 0; c < panel.strategies(); ++c) {
        const auto col = panel.column(c);
        const auto m = panel.column_mask(c);
        for (std::size_t r = 0; r < d; ++r) {
            const std::size_t src = draw.indices[r];
            if (src >= d)
                fail(ErrorKind::OutOfRange, "draw index outside the panel");
            values[c * d + r] = col[src];
            mask[c * d + r] = m[src];
        }
    }
    return ReturnPanel(panel.period_labels(), panel.names(), std::move(values), std::move(mask));
}

inline FactorPanel apply_draw(const FactorPanel& factors, const IndexDraw& draw)
{
    const std::size_t d = factors.periods();
    const std::size_t k = factors.factors();
    if (draw.size() != d)
        fail(ErrorKind::LengthMismatch, "draw length differs from the factor panel length");
    std::vector<double> values(d * k);
    for (std::size_t r = 0; r < d; ++r) {
        if (draw.indices[r] >= d)
            fail(ErrorKind::OutOfRange, "draw index outside the factor panel");
        const auto src = factors.row(draw.indices[r]);
        std::copy(src.begin(), src.end(), values.begin() + static_cast<std::ptrdiff_t>(r * k));
    }
    return FactorPanel(factors.period_labels(), factors.names(), std::move(values));
}

} // namespace mtcal
