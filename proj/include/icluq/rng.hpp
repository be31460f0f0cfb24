#pragma once

// Deterministic random numbers with an explicit substream contract: every
// consumer derives its own stream from (root seed, purpose tag, index), so
// results never depend on scheduling or batch order. Generators are
// hand-rolled (xoshiro256++, Box-Muller, Marsaglia-Tsang) because libc++
// distributions are implementation-defined and would break reproducibility
// across toolchains.

#include <cmath>
#include <cstdint>
#include <string_view>

#include "icluq/tensor.hpp"

namespace icluq {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

class Rng {
public:
    Rng() : Rng(0, "default", 0) {}

    Rng(std::uint64_t root_seed, std::string_view stream, std::uint64_t index) {
        std::uint64_t mix = root_seed;
        mix ^= detail::fnv1a(stream) + 0x9e3779b97f4a7c15ULL + (mix << 6) + (mix >> 2);
        mix ^= index + 0x9e3779b97f4a7c15ULL + (mix << 6) + (mix >> 2);
        for (auto& s : state_) s = detail::splitmix64(mix);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in {0, ..., n-1} by rejection (unbiased).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Gamma(shape, rate) via Marsaglia-Tsang; shape < 1 handled by boosting.
    double gamma(double shape, double rate) {
        if (shape < 1.0) {
            double u;
            do {
                u = uniform();
            } while (u <= 0.0);
            return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
                return d * v / rate;
            }
        }
    }

    Tensor normal_vector(std::int64_t n) {
        Tensor v = Tensor::vector(n);
        for (std::int64_t i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    Tensor normal_matrix(std::int64_t r, std::int64_t c, double stddev = 1.0) {
        Tensor m(r, c);
        for (std::int64_t i = 0; i < m.size(); ++i) m[i] = stddev * normal();
        return m;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4] = {};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace icluq
