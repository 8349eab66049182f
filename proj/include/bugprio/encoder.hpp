// SPDX-License-Identifier: Apache-2.0
#pragma once

// Stacked Transformer encoder:
//   S   = E(tokens) + P(positions)
//   Q,K,V = S W_Q, S W_K, S W_V
//   head_h = softmax((Q W_h^Q)(K W_h^K)^T / sqrt(d_k)) (V W_h^V)
//   A   = concat(head_1..head_h) W_O
//   O   = LN(S + A)
//   out = LN(O + ReLU(O W_1 + b_1) W_2 + b_2)
//
// Embedding tables are stored one row per token / position.

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bugprio/autodiff.hpp"
#include "bugprio/rng.hpp"
#include "bugprio/tokenizer.hpp"

namespace bugprio {

struct EncoderConfig {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t d_model = 32;
    std::size_t d_ff = 128;
    std::size_t max_len = 64;
    std::size_t vocab_size = 8192;
    double dropout = 0.1;
    double attention_dropout = 0.1;
    double layer_norm_epsilon = 1e-5;

    std::size_t head_dim() const { return d_model / heads; }

    /// Throws std::invalid_argument naming the first violated constraint.
    void validate() const;

    bool operator==(const EncoderConfig&) const = default;

    /// L=12, h=12, d_m=768, dff=3072, max length 512.
    static EncoderConfig paper_scale(std::size_t vocab_size);
};

enum class Mode { train, eval };

template <typename T>
struct LayerParams {
    ad::Parameter<T> w_q, w_k, w_v;
    std::vector<ad::Parameter<T>> head_q, head_k, head_v;
    ad::Parameter<T> w_o;
    ad::Parameter<T> w_1, b_1, w_2, b_2;
    ad::Parameter<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

template <typename T>
struct EncoderParams {
    EncoderConfig config;
    ad::Parameter<T> token_embedding;     // vocab_size x d_model
    ad::Parameter<T> position_embedding;  // max_len x d_model
    std::vector<LayerParams<T>> layers;

    /// Weights ~ N(0, 0.02), biases 0, layer-norm gains 1.
    static EncoderParams init(const EncoderConfig& config, Rng& rng);

    /// Stable, ordered (name, parameter) list; the order defines checkpoint layout.
    std::vector<std::pair<std::string, ad::Parameter<T>*>> named_parameters();
};

/// Per-forward options: dropout is active only in train mode and draws from rng.
struct ForwardOptions {
    Mode mode = Mode::eval;
    Rng* rng = nullptr;
};

/// Token plus position embedding for the first ids.size() positions.
template <typename T>
ad::Var<T> embed(ad::Graph<T>& g, EncoderParams<T>& params, std::span<const TokenId> ids);

/// Scaled dot-product attention for one head. key_mask[j] == 0 removes key j.
template <typename T>
ad::Var<T> attention_head(ad::Var<T> q, ad::Var<T> k, ad::Var<T> v, std::span<const std::uint8_t> key_mask,
                          const ForwardOptions& opts, double attention_dropout = 0.0);

template <typename T>
ad::Var<T> multi_head(ad::Var<T> x, LayerParams<T>& layer, const EncoderConfig& config,
                      std::span<const std::uint8_t> key_mask, const ForwardOptions& opts);

template <typename T>
ad::Var<T> encoder_layer(ad::Var<T> x, LayerParams<T>& layer, const EncoderConfig& config,
                         std::span<const std::uint8_t> key_mask, const ForwardOptions& opts);

/// Full encoder over the padded sequence; returns max_len x d_model rows
/// (pad rows are computed but carry no information).
template <typename T>
ad::Var<T> encode(ad::Graph<T>& g, EncoderParams<T>& params, const TokenSequence& seq, const ForwardOptions& opts);

/// Encoder over the attended prefix only (length x d_model). Pads sit at the
/// tail and are masked out of every key, so these rows equal the first
/// `length` rows of encode().
template <typename T>
ad::Var<T> encode_content(ad::Graph<T>& g, EncoderParams<T>& params, const TokenSequence& seq,
                          const ForwardOptions& opts);

/// Eval-mode forward without gradient bookkeeping.
template <typename T>
Tensor<T> encode_eval(EncoderParams<T>& params, const TokenSequence& seq);

/// Copies every tensor into another precision (same config and names).
template <typename To, typename From>
EncoderParams<To> convert_params(const EncoderParams<From>& params);

}  // namespace bugprio
