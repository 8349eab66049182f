// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bugprio/autodiff.hpp"
#include "bugprio/log.hpp"
#include "bugprio/model.hpp"
#include "bugprio/optim.hpp"
#include "bugprio/tokenizer.hpp"

namespace bugprio {

enum class MaskAction : std::uint8_t { mask, random, keep };

/// One dynamically masked view of a framed sequence.
struct MaskedSequence {
    TokenSequence input;
    /// Original id at masked positions, ad::kIgnoreIndex elsewhere; one per input position.
    std::vector<std::int64_t> targets;
    /// Masked positions in increasing order.
    std::vector<std::size_t> positions;
    /// Replacement applied at each entry of `positions`.
    std::vector<MaskAction> actions;
};

/// max(1, round(rate * content_length)).
std::size_t mask_count(std::size_t content_length, double rate = 0.15);

/// Selects mask_count() content positions uniformly without replacement. Each
/// becomes [MASK] with p=0.8, a uniform non-special token with p=0.1, or stays
/// with p=0.1. CLS, EOS and PAD are never selected.
MaskedSequence dynamic_mask(const TokenSequence& seq, std::size_t vocab_size, Rng& rng, double rate = 0.15);

/// k independent dynamic_mask draws.
std::vector<MaskedSequence> expand_variants(const TokenSequence& seq, std::size_t k, std::size_t vocab_size, Rng& rng,
                                            double rate = 0.15);

/// Uniform draw over the ids that are not special tokens.
TokenId random_regular_token(std::size_t vocab_size, Rng& rng);

/// Mean cross-entropy over positions whose target is not ignored. Throws when
/// no position is masked.
template <typename T>
ad::Var<T> mlm_loss(ad::Var<T> logits, std::span<const std::int64_t> targets);

/// Vocabulary logits for the given hidden rows: H E^T + b.
template <typename T>
ad::Var<T> mlm_logits(Model<T>& model, ad::Var<T> hidden);

struct MlmRunParams {
    std::size_t batch = 16;
    std::size_t steps = 500;
    double lr = 1e-3;
    std::size_t warmup = 50;
    std::size_t variants = 10;
    double mask_rate = 0.15;
    AdamWOptions adam;
    std::uint64_t seed = 1;
};

struct StageHistory {
    std::vector<double> loss;
    std::vector<double> lr;
};

/// Masked-token pre-training over framed sequences. Each epoch visits every
/// sequence `variants` times in a shuffled order and masks it afresh on each
/// visit. One event per step: {"stage","step","lr","loss"}.
StageHistory pretrain_mlm(Model<float>& model, const std::vector<TokenSequence>& corpus, const MlmRunParams& params,
                          const TrainLog& log = {});

/// 1-based step learning rate shared by every training stage.
double stage_lr(std::size_t step_index, std::size_t warmup, std::size_t total, double peak);

}  // namespace bugprio
