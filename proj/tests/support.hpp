// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared oracles and harness pieces for the unit tests and the acceptance run.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bugprio/autodiff.hpp"
#include "bugprio/corpus.hpp"
#include "bugprio/encoder.hpp"
#include "bugprio/rng.hpp"

namespace bugprio::testing {

Tensor<double> random_tensor(const Shape& shape, Rng& rng, double scale = 1.0);

/// Entries with |x| in [0.1, 1.1] and random sign, for relu checks.
Tensor<double> away_from_zero(const Shape& shape, Rng& rng);

/// sum(y * R) with R drawn from a fresh Rng(seed) shaped like y.
ad::Var<double> readout(ad::Var<double> y, std::uint64_t seed);

struct GradResult {
    std::string name;
    double worst = 0.0;
};

/// Grad checks every differentiable primitive (each input in turn) at
/// `points` random points.
std::vector<GradResult> check_primitives(std::size_t points, std::uint64_t seed);

/// Grad check of a scalar readout of the full encoder (train mode with fixed
/// dropout masks, padded input) at `points` random parameter/token draws.
/// Probes `coords` coordinates per parameter tensor.
double check_encoder(const EncoderConfig& config, std::size_t points, std::size_t coords, std::uint64_t seed);

/// Plain loops over (gold, pred) pairs; shares no code with the library.
struct OracleMetrics {
    std::array<double, kNumPriorities> precision{}, recall{}, f1{};
    std::array<std::size_t, kNumPriorities> support{};
    double accuracy = 0.0, weighted_precision = 0.0, weighted_recall = 0.0, weighted_f1 = 0.0;
};
OracleMetrics oracle_metrics(const std::vector<int>& gold, const std::vector<int>& pred);

/// Double loop over all (i, j) cosine terms.
double oracle_cl_loss(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& p,
                      double tau);

/// Random UTF-8: ASCII words, code punctuation, 2-4 byte code points, emoji, whitespace runs.
std::string random_utf8(Rng& rng, std::size_t max_units);

/// Upper-tail p-value of a chi-square statistic.
double chi_square_p_value(double statistic, double dof);

}  // namespace bugprio::testing
