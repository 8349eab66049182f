// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bugprio/autodiff.hpp"
#include "bugprio/log.hpp"
#include "bugprio/model.hpp"
#include "bugprio/optim.hpp"
#include "bugprio/tokenizer.hpp"

namespace bugprio {

enum class AugmentMethod { swap_two_words, delete_one_word, mask_one_token };

/// "swap" | "delete" | "mask"
std::string_view to_string(AugmentMethod method);
AugmentMethod parse_augment_method(std::string_view text);

class AugmentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Exchanges two distinct uniformly chosen whitespace words; separators stay put.
std::string swap_two_words(std::string_view text, Rng& rng);
/// Removes one uniformly chosen whitespace word together with one adjacent separator.
std::string delete_one_word(std::string_view text, Rng& rng);
/// Replaces one uniformly chosen content token with [MASK].
TokenSequence mask_one_token(const TokenSequence& seq, Rng& rng);

/// Positive instance of `text` under `method`, framed to max_len.
TokenSequence make_positive(std::string_view text, AugmentMethod method, const Vocabulary& vocab, std::size_t max_len,
                            Rng& rng);

/// Mean of the encoder outputs over the attended positions (1 x d_model).
template <typename T>
ad::Var<T> represent(ad::Graph<T>& g, EncoderParams<T>& params, const TokenSequence& seq, const ForwardOptions& opts);

/// In-batch-negative contrastive loss over N anchors (rows of `anchors`) and
/// their positives (rows of `positives`):
///   l_i = -log exp(cos(r_i, r_i+)/tau) / sum_j exp(cos(r_i, r_j+)/tau),
/// averaged over i.
template <typename T>
ad::Var<T> cl_loss(ad::Var<T> anchors, ad::Var<T> positives, double tau);

/// Value-only form over plain vectors.
double cl_loss(const std::vector<std::vector<double>>& anchors, const std::vector<std::vector<double>>& positives,
               double tau);

struct ClRunParams {
    std::size_t batch = 16;
    std::size_t steps = 200;
    double lr = 1e-4;
    std::size_t warmup = 20;
    double tau = 0.05;
    AugmentMethod method = AugmentMethod::swap_two_words;
    std::size_t max_len = 64;
    AdamWOptions adam;
    std::uint64_t seed = 1;
};

struct ClHistory {
    std::vector<double> loss;
    std::vector<double> lr;
    /// Mean cos(r_i, r_i+) per step, measured on the training forward.
    std::vector<double> alignment;
    /// log mean exp(-2 |u_i - u_j|^2) over normalized anchors per step.
    std::vector<double> uniformity;
    std::size_t skipped = 0;
};

/// Contrastive pre-training over composed report texts. Texts too short for
/// the augmentation are skipped and counted.
ClHistory pretrain_cl(Model<float>& model, const std::vector<std::string>& texts, const Vocabulary& vocab,
                      const ClRunParams& params, const TrainLog& log = {});

}  // namespace bugprio
