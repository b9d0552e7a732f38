#pragma once

// Reproducible random streams.
//
// Every random quantity in a scenario comes from a CounterRng whose key is derived from
// the scenario's root seed plus a text label and integer indices, e.g.
// derive_seed(root, "disturbance", {t}). The generator is counter based: draw number c
// of a stream with key K is splitmix64_mix(K + (c + 1) * 0x9E3779B97F4A7C15). Normals
// are produced in pairs with the Box-Muller transform
//     u1 = ((x1 >> 11) + 1) * 2^-53   in (0, 1]
//     u2 =  (x2 >> 11)      * 2^-53   in [0, 1)
//     z0 = sqrt(-2 ln u1) cos(2 pi u2),  z1 = sqrt(-2 ln u1) sin(2 pi u2)
// so any implementation of these few lines reproduces the streams bit for bit.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>

#include <Eigen/Dense>

namespace netpc {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// FNV-1a over the label, folded with the root seed and each index through splitmix64.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                    std::initializer_list<std::int64_t> indices = {}) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    std::uint64_t key = splitmix64_mix(root ^ splitmix64_mix(h));
    for (std::int64_t idx : indices) {
        key = splitmix64_mix(key + kGolden * (static_cast<std::uint64_t>(idx) + 1));
    }
    return key;
}

class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() { return splitmix64_mix(key_ + (++counter_) * kGolden); }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace netpc
