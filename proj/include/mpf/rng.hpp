#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace mpf {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t hash_name(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    return h;
}

/// Stateless generator: every draw is a pure function of
/// (seed, stream, step, index), so results do not depend on evaluation order
/// or thread count.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::string_view stream) : key_(splitmix64(seed ^ splitmix64(hash_name(stream)))) {}

    std::uint64_t bits(std::uint64_t step, std::uint64_t index) const {
        return splitmix64(splitmix64(key_ ^ splitmix64(step)) + index);
    }

    /// Uniform on (0, 1).
    double uniform(std::uint64_t step, std::uint64_t index) const {
        return (static_cast<double>(bits(step, index) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal (Box–Muller on two counter draws).
    double normal(std::uint64_t step, std::uint64_t index) const {
        const double u1 = uniform(step, 2 * index), u2 = uniform(step, 2 * index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Two independent standard normals from one Box–Muller pair.
    void normal_pair(std::uint64_t step, std::uint64_t index, double& a, double& b) const {
        const double u1 = uniform(step, 2 * index), u2 = uniform(step, 2 * index + 1);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phi = 2.0 * std::numbers::pi * u2;
        a = r * std::cos(phi);
        b = r * std::sin(phi);
    }

private:
    std::uint64_t key_;
};

}  // namespace mpf
