#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <string_view>

#include "mtcal/panel.hpp"

namespace mtcal {

/// 64-bit FNV-1a, used for config hashes and data fingerprints.
class Fnv1a {
public:
    void bytes(const void* data, std::size_t n) noexcept
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }

    void str(std::string_view s) noexcept
    {
        const std::uint64_t n = s.size();
        bytes(&n, sizeof n);
        bytes(s.data(), s.size());
    }

    void f64(double v) noexcept
    {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        bytes(&bits, sizeof bits);
    }

    void u64(std::uint64_t v) noexcept { bytes(&v, sizeof v); }

    [[nodiscard]] std::uint64_t value() const noexcept { return h_; }

    [[nodiscard]] std::string hex() const
    {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
        return buf;
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string fingerprint(const ReturnPanel& panel)
{
    Fnv1a h;
    h.u64(panel.periods());
    h.u64(panel.strategies());
    for (const auto& l : panel.period_labels())
        h.str(l);
    for (const auto& n : panel.names())
        h.str(n);
    for (double v : panel.raw_values())
        h.f64(v);
    h.bytes(panel.raw_mask().data(), panel.raw_mask().size());
    return h.hex();
}

inline std::string fingerprint(const FactorPanel& factors)
{
    Fnv1a h;
    h.u64(factors.periods());
    h.u64(factors.factors());
    for (const auto& l : factors.period_labels())
        h.str(l);
    for (const auto& n : factors.names())
        h.str(n);
    for (double v : factors.raw_values())
        h.f64(v);
    return h.hex();
}

} // namespace mtcal
