// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bugprio/corpus.hpp"

namespace bugprio {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    /// Set when the class has no gold item; its metrics are then reported as 0.
    bool zero_support = false;
};

struct WeightedMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct BucketAccuracy {
    std::string name;
    std::size_t count = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

using ConfusionMatrix = std::array<std::array<std::size_t, kNumPriorities>, kNumPriorities>;

struct EvalReport {
    std::array<ClassMetrics, kNumPriorities> per_class{};
    WeightedMetrics weighted;
    double accuracy = 0.0;
    /// confusion[gold][predicted]
    ConfusionMatrix confusion{};
    /// Non-empty buckets only, in ascending order.
    std::vector<BucketAccuracy> length_buckets;
    std::size_t total = 0;
    /// Predictions whose top probability was shared by several classes.
    std::size_t ties = 0;
};

/// Per-class P/R/F1 from the confusion matrix and support-weighted averages.
/// Throws std::invalid_argument on empty or mismatched input.
EvalReport compute_metrics(std::span<const Priority> gold, std::span<const Priority> predicted);

/// "0-100", "100-200", ..., "400-500", ">500"; upper bound inclusive.
std::string length_bucket(std::size_t words);

/// Accuracy per non-empty length bucket.
std::vector<BucketAccuracy> bucket_accuracy(std::span<const std::size_t> lengths, std::span<const Priority> gold,
                                            std::span<const Priority> predicted);

nlohmann::ordered_json to_json(const EvalReport& report);

/// Fixed-width per-class table plus weighted row, accuracy and confusion matrix.
std::string render_report(const EvalReport& report);

}  // namespace bugprio
