// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bugprio/corpus.hpp"
#include "bugprio/encoder.hpp"

namespace bugprio {

/// Provenance of a set of weights; enforces pre-train, pre-train, fine-tune order.
enum class Stage { init, mlm, cl, finetuned };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

/// Encoder plus the two task heads. The masked-token head reuses the token
/// embedding as its output projection and adds a per-token bias; the priority
/// head is a bias-free linear map from the pooled vector to the five labels.
template <typename T>
struct Model {
    EncoderParams<T> encoder;
    ad::Parameter<T> mlm_bias;    // vocab_size
    ad::Parameter<T> classifier;  // kNumPriorities x d_model

    static Model init(const EncoderConfig& config, Rng& rng);

    const EncoderConfig& config() const { return encoder.config; }
    std::vector<std::pair<std::string, ad::Parameter<T>*>> named_parameters();
    std::vector<ad::Parameter<T>*> parameters();
    void zero_grad();
};

template <typename To, typename From>
Model<To> convert_model(const Model<From>& model);

}  // namespace bugprio
