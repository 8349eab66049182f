// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace bugprio {

/// Seeded generator with platform-independent draws.
///
/// std::uniform_*_distribution and std::normal_distribution are
/// implementation-defined, so the helpers here are derived directly from
/// the raw 64-bit engine output. Every run with the same seed produces the
/// same stream on every standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::size_t index(std::size_t n);

    /// Standard normal draw (Box-Muller, one value per call).
    double normal();

    /// Fisher-Yates shuffle.
    template <typename V>
    void shuffle(V& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(values[i - 1], values[j]);
        }
    }

    /// Child generator for an independent stream tagged by `stream`.
    Rng fork(std::uint64_t stream);

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to fan a master seed out per stage.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace bugprio
