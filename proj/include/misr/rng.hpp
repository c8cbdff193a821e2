#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace misr {

// Deterministic counter-based generator (splitmix64 over a keyed state).
// Distributions are hand-rolled so streams are stable across standard
// libraries; std::shuffle and std::normal_distribution are not.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // Sub-stream derivation: one master seed, independent named streams.
    // stream(seed, "data").derive("epoch", 3) etc.
    Rng derive(std::string_view name) const {
        std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        return Rng(mix(state_ ^ h));
    }

    Rng derive(std::string_view name, std::uint64_t index) const {
        return derive(name).derive_index(index);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, n) without modulo bias (rejection on the top range).
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    double uniform() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {  // Box-Muller, one value per call pair
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Fisher-Yates; identity when n <= 1.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(perm[i - 1], perm[j]);
        }
        return perm;
    }

private:
    Rng derive_index(std::uint64_t index) const { return Rng(mix(state_ + 0x9e3779b97f4a7c15ULL * (index + 1))); }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace misr
