#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

#include <Eigen/Core>

namespace lmabo {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a 64-bit word.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed from a base seed and a list of tags
/// (iteration index, purpose code, ...). Used so every stochastic step of a run
/// is a pure function of (seed, position) and needs no checkpointed RNG state.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(base);
    for (auto t : tags) h = mix64(h ^ mix64(t + 0x632BE59BD9B4E019ull));
    return h;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform double in (0, 1).
inline double uniform_open(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Box-Muller without caching, so draws depend only on the engine state.
inline double standard_normal(Rng& rng) {
    const double u1 = uniform_open(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline Eigen::MatrixXd standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd z(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = standard_normal(rng);
    return z;
}

/// n points of a digitally shifted (XOR-scrambled) Sobol sequence in [0,1)^dim, one per row.
Eigen::MatrixXd scrambled_sobol(Eigen::Index n, Eigen::Index dim, std::uint64_t seed);

/// n i.i.d. uniform points in [0,1)^dim, one per row.
Eigen::MatrixXd uniform_points(Eigen::Index n, Eigen::Index dim, Rng& rng);

}  // namespace lmabo
