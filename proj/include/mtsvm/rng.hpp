#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>

#include <Eigen/Core>

namespace mtsvm {

// splitmix64 step; used both as a stream mixer and to seed engines.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic seed derivation: mix64(a, b) is the documented way every
// sub-stream (dataset attempt, Monte-Carlo batch, probe set, ...) gets its
// seed from a master seed. Chain for more than two inputs.
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a;
    std::uint64_t h = splitmix64(s);
    s = h ^ b;
    return splitmix64(s);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix64(mix64(a, b), c);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
    return mix64(mix64(a, b, c), d);
}

// Reproducible generator: mt19937_64 (bit-identical across platforms) plus
// hand-rolled variate transforms, because the std distribution objects are
// not required to produce identical streams across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // in [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Box-Muller, cosine branch only; two uniforms per variate.
    double normal() {
        const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Inverse-CDF draw from a finite distribution given by `probs` (sums to 1).
    int discrete(const Eigen::VectorXd& probs) {
        const double u = uniform01();
        double acc = 0.0;
        for (int k = 0; k < probs.size(); ++k) {
            acc += probs[k];
            if (u < acc) return k;
        }
        return static_cast<int>(probs.size()) - 1;
    }

    // Fisher-Yates with modulo indexing (bias is negligible at 2^-64 scale).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(engine_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace mtsvm
