// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "bugprio/corpus.hpp"
#include "bugprio/log.hpp"
#include "bugprio/metrics.hpp"
#include "bugprio/model.hpp"
#include "bugprio/optim.hpp"
#include "bugprio/tokenizer.hpp"

namespace bugprio {

struct PriorityDistribution {
    std::array<double, kNumPriorities> probs{};

    /// Highest probability; ties go to the lowest class index.
    Priority argmax() const;
    /// True when more than one class shares the top probability.
    bool tied() const;
    nlohmann::ordered_json to_json() const;
};

/// Arithmetic mean of the rows with pad_mask[r] != 0 (1 x cols).
/// Throws std::invalid_argument when every row is padding.
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& outputs, std::span<const std::uint8_t> pad_mask);

/// Numerically stable softmax over the five class logits.
PriorityDistribution softmax_distribution(std::span<const double> logits);

/// Eval-mode class distribution for an already framed sequence.
template <typename T>
PriorityDistribution classify(Model<T>& model, const TokenSequence& seq);

PriorityDistribution predict(Model<float>& model, const Vocabulary& vocab, const BugReport& report,
                             std::size_t max_len);

struct FinetuneParams {
    std::size_t batch = 16;
    std::size_t epochs = 30;
    double lr = 1e-3;
    std::size_t warmup = 20;
    std::size_t max_len = 64;
    AdamWOptions adam;
    std::uint64_t seed = 1;
};

struct FinetuneHistory {
    std::vector<double> epoch_loss;
    std::vector<double> valid_f1;
    std::size_t best_epoch = 0;
    double best_valid_f1 = 0.0;
    std::size_t steps = 0;
};

/// Trains encoder and classifier jointly with cross-entropy. After every
/// epoch the validation weighted F1 is measured and the best epoch's weights
/// (latest on ties) are restored at the end. Unlabeled records are ignored.
/// An empty validation set keeps the final weights.
FinetuneHistory finetune(Model<float>& model, const std::vector<BugReport>& train, const std::vector<BugReport>& valid,
                         const Vocabulary& vocab, const FinetuneParams& params, const TrainLog& log = {});

/// Argmax predictions over the labeled records, with length buckets.
/// Throws std::invalid_argument when no record is labeled.
EvalReport evaluate(Model<float>& model, const Vocabulary& vocab, const std::vector<BugReport>& test,
                    std::size_t max_len, const TrainLog& log = {});

}  // namespace bugprio
