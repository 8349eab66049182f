// SPDX-License-Identifier: Apache-2.0
#include "bugprio/encoder.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bugprio {

using ad::Parameter;
using ad::Var;

void EncoderConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("encoder config: " + what); };
    if (heads == 0) {
        fail("head count must be positive");
    }
    if (d_model == 0 || d_model % heads != 0) {
        fail("d_model (" + std::to_string(d_model) + ") must be a positive multiple of heads (" +
             std::to_string(heads) + ")");
    }
    if (d_ff == 0) {
        fail("d_ff must be positive");
    }
    if (max_len < 3) {
        fail("max_len must be at least 3");
    }
    if (vocab_size <= kFirstMergedId) {
        fail("vocab_size must exceed " + std::to_string(kFirstMergedId));
    }
    if (dropout < 0.0 || dropout >= 1.0 || attention_dropout < 0.0 || attention_dropout >= 1.0) {
        fail("dropout rates must lie in [0, 1)");
    }
    if (!(layer_norm_epsilon > 0.0)) {
        fail("layer_norm_epsilon must be positive");
    }
}

EncoderConfig EncoderConfig::paper_scale(std::size_t vocab_size) {
    EncoderConfig c;
    c.layers = 12;
    c.heads = 12;
    c.d_model = 768;
    c.d_ff = 3072;
    c.max_len = 512;
    c.vocab_size = vocab_size;
    return c;
}

namespace {

template <typename T>
Parameter<T> normal_param(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor<T> t = Tensor<T>::matrix(rows, cols);
    for (T& v : t.values()) {
        v = static_cast<T>(0.02 * rng.normal());
    }
    return Parameter<T>(std::move(t));
}

template <typename T>
Parameter<T> filled_param(std::size_t cols, T value) {
    return Parameter<T>(Tensor<T>({cols}, value));
}

}  // namespace

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& config, Rng& rng) {
    config.validate();
    EncoderParams p;
    p.config = config;
    const std::size_t d = config.d_model, dk = config.head_dim();
    p.token_embedding = normal_param<T>(config.vocab_size, d, rng);
    p.position_embedding = normal_param<T>(config.max_len, d, rng);
    p.layers.resize(config.layers);
    for (LayerParams<T>& l : p.layers) {
        l.w_q = normal_param<T>(d, d, rng);
        l.w_k = normal_param<T>(d, d, rng);
        l.w_v = normal_param<T>(d, d, rng);
        for (std::size_t h = 0; h < config.heads; ++h) {
            l.head_q.push_back(normal_param<T>(d, dk, rng));
            l.head_k.push_back(normal_param<T>(d, dk, rng));
            l.head_v.push_back(normal_param<T>(d, dk, rng));
        }
        l.w_o = normal_param<T>(config.heads * dk, d, rng);
        l.w_1 = normal_param<T>(d, config.d_ff, rng);
        l.b_1 = filled_param<T>(config.d_ff, T{0});
        l.w_2 = normal_param<T>(config.d_ff, d, rng);
        l.b_2 = filled_param<T>(d, T{0});
        l.ln1_gain = filled_param<T>(d, T{1});
        l.ln1_bias = filled_param<T>(d, T{0});
        l.ln2_gain = filled_param<T>(d, T{1});
        l.ln2_bias = filled_param<T>(d, T{0});
    }
    return p;
}

template <typename T>
std::vector<std::pair<std::string, Parameter<T>*>> EncoderParams<T>::named_parameters() {
    std::vector<std::pair<std::string, Parameter<T>*>> out;
    out.emplace_back("embeddings.token", &token_embedding);
    out.emplace_back("embeddings.position", &position_embedding);
    for (std::size_t i = 0; i < layers.size(); ++i) {
        LayerParams<T>& l = layers[i];
        const std::string pre = "layers." + std::to_string(i) + ".";
        out.emplace_back(pre + "attention.w_q", &l.w_q);
        out.emplace_back(pre + "attention.w_k", &l.w_k);
        out.emplace_back(pre + "attention.w_v", &l.w_v);
        for (std::size_t h = 0; h < l.head_q.size(); ++h) {
            const std::string hp = pre + "attention.head." + std::to_string(h) + ".";
            out.emplace_back(hp + "w_q", &l.head_q[h]);
            out.emplace_back(hp + "w_k", &l.head_k[h]);
            out.emplace_back(hp + "w_v", &l.head_v[h]);
        }
        out.emplace_back(pre + "attention.w_o", &l.w_o);
        out.emplace_back(pre + "ffn.w_1", &l.w_1);
        out.emplace_back(pre + "ffn.b_1", &l.b_1);
        out.emplace_back(pre + "ffn.w_2", &l.w_2);
        out.emplace_back(pre + "ffn.b_2", &l.b_2);
        out.emplace_back(pre + "ln1.gain", &l.ln1_gain);
        out.emplace_back(pre + "ln1.bias", &l.ln1_bias);
        out.emplace_back(pre + "ln2.gain", &l.ln2_gain);
        out.emplace_back(pre + "ln2.bias", &l.ln2_bias);
    }
    return out;
}

template <typename T>
Var<T> embed(ad::Graph<T>& g, EncoderParams<T>& params, std::span<const TokenId> ids) {
    const EncoderConfig& c = params.config;
    if (ids.size() > c.max_len) {
        throw std::out_of_range("embed: sequence of length " + std::to_string(ids.size()) + " exceeds max_len " +
                                std::to_string(c.max_len));
    }
    for (TokenId id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
            throw std::out_of_range("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                                    std::to_string(c.vocab_size));
        }
    }
    std::vector<std::int32_t> positions(ids.size());
    std::iota(positions.begin(), positions.end(), 0);
    Var<T> tok = ad::embedding(g.param(params.token_embedding), ids);
    Var<T> pos = ad::embedding(g.param(params.position_embedding), std::span<const std::int32_t>(positions));
    return ad::add(tok, pos);
}

template <typename T>
Var<T> attention_head(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> key_mask,
                      const ForwardOptions& opts, double attention_dropout) {
    if (q.shape() != k.shape() || k.value().rows() != v.value().rows()) {
        throw ShapeError("attention_head", q.shape(), k.shape());
    }
    const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(k.value().cols())));
    Var<T> scores = ad::scale(ad::matmul_nt(q, k), inv_sqrt_dk);
    Var<T> weights = ad::softmax_rows(scores, key_mask);
    if (opts.mode == Mode::train && attention_dropout > 0.0) {
        weights = ad::dropout(weights, attention_dropout, *opts.rng);
    }
    return ad::matmul(weights, v);
}

template <typename T>
Var<T> multi_head(Var<T> x, LayerParams<T>& layer, const EncoderConfig& config, std::span<const std::uint8_t> key_mask,
                  const ForwardOptions& opts) {
    ad::Graph<T>& g = *x.graph;
    Var<T> q = ad::matmul(x, g.param(layer.w_q));
    Var<T> k = ad::matmul(x, g.param(layer.w_k));
    Var<T> v = ad::matmul(x, g.param(layer.w_v));
    std::vector<Var<T>> heads;
    heads.reserve(config.heads);
    for (std::size_t h = 0; h < config.heads; ++h) {
        Var<T> qh = ad::matmul(q, g.param(layer.head_q[h]));
        Var<T> kh = ad::matmul(k, g.param(layer.head_k[h]));
        Var<T> vh = ad::matmul(v, g.param(layer.head_v[h]));
        heads.push_back(attention_head(qh, kh, vh, key_mask, opts, config.attention_dropout));
    }
    Var<T> joined = heads.size() == 1 ? heads[0] : ad::concat_cols(std::span<const Var<T>>(heads));
    return ad::matmul(joined, g.param(layer.w_o));
}

template <typename T>
Var<T> encoder_layer(Var<T> x, LayerParams<T>& layer, const EncoderConfig& config,
                     std::span<const std::uint8_t> key_mask, const ForwardOptions& opts) {
    ad::Graph<T>& g = *x.graph;
    const bool train = opts.mode == Mode::train;
    const T eps = static_cast<T>(config.layer_norm_epsilon);
    Var<T> attn = multi_head(x, layer, config, key_mask, opts);
    if (train) {
        attn = ad::dropout(attn, config.dropout, *opts.rng);
    }
    Var<T> o = ad::layer_norm(ad::add(x, attn), g.param(layer.ln1_gain), g.param(layer.ln1_bias), eps);
    Var<T> hidden = ad::relu(ad::add_row(ad::matmul(o, g.param(layer.w_1)), g.param(layer.b_1)));
    Var<T> ffn = ad::add_row(ad::matmul(hidden, g.param(layer.w_2)), g.param(layer.b_2));
    if (train) {
        ffn = ad::dropout(ffn, config.dropout, *opts.rng);
    }
    return ad::layer_norm(ad::add(o, ffn), g.param(layer.ln2_gain), g.param(layer.ln2_bias), eps);
}

namespace {

template <typename T>
Var<T> run_layers(ad::Graph<T>& g, EncoderParams<T>& params, std::span<const TokenId> ids,
                  std::span<const std::uint8_t> mask, const ForwardOptions& opts) {
    if (opts.mode == Mode::train && opts.rng == nullptr) {
        throw std::invalid_argument("encode: train mode needs a random generator");
    }
    Var<T> x = embed(g, params, ids);
    for (LayerParams<T>& layer : params.layers) {
        x = encoder_layer(x, layer, params.config, mask, opts);
    }
    return x;
}

}  // namespace

template <typename T>
Var<T> encode(ad::Graph<T>& g, EncoderParams<T>& params, const TokenSequence& seq, const ForwardOptions& opts) {
    if (seq.attention_mask.size() != seq.ids.size()) {
        throw ShapeError("encode: attention mask length differs from id count");
    }
    return run_layers(g, params, std::span<const TokenId>(seq.ids), std::span<const std::uint8_t>(seq.attention_mask),
                      opts);
}

template <typename T>
Var<T> encode_content(ad::Graph<T>& g, EncoderParams<T>& params, const TokenSequence& seq,
                      const ForwardOptions& opts) {
    if (seq.length == 0 || seq.length > seq.ids.size()) {
        throw std::invalid_argument("encode_content: sequence has no attended positions");
    }
    std::span<const TokenId> ids(seq.ids.data(), seq.length);
    return run_layers(g, params, ids, {}, opts);
}

template <typename T>
Tensor<T> encode_eval(EncoderParams<T>& params, const TokenSequence& seq) {
    ad::Graph<T> g(ad::GradMode::disabled);
    return encode_content(g, params, seq, ForwardOptions{}).value();
}

template <typename To, typename From>
EncoderParams<To> convert_params(const EncoderParams<From>& params) {
    auto cv = [](const Parameter<From>& p) { return Parameter<To>(tensor_cast<To>(p.value)); };
    auto cv_all = [&](const std::vector<Parameter<From>>& ps) {
        std::vector<Parameter<To>> out;
        for (const auto& p : ps) {
            out.push_back(cv(p));
        }
        return out;
    };
    EncoderParams<To> out;
    out.config = params.config;
    out.token_embedding = cv(params.token_embedding);
    out.position_embedding = cv(params.position_embedding);
    for (const LayerParams<From>& l : params.layers) {
        LayerParams<To> t;
        t.w_q = cv(l.w_q);
        t.w_k = cv(l.w_k);
        t.w_v = cv(l.w_v);
        t.head_q = cv_all(l.head_q);
        t.head_k = cv_all(l.head_k);
        t.head_v = cv_all(l.head_v);
        t.w_o = cv(l.w_o);
        t.w_1 = cv(l.w_1);
        t.b_1 = cv(l.b_1);
        t.w_2 = cv(l.w_2);
        t.b_2 = cv(l.b_2);
        t.ln1_gain = cv(l.ln1_gain);
        t.ln1_bias = cv(l.ln1_bias);
        t.ln2_gain = cv(l.ln2_gain);
        t.ln2_bias = cv(l.ln2_bias);
        out.layers.push_back(std::move(t));
    }
    return out;
}

#define BUGPRIO_INSTANTIATE(T)                                                                                 \
    template struct EncoderParams<T>;                                                                          \
    template Var<T> embed(ad::Graph<T>&, EncoderParams<T>&, std::span<const TokenId>);                         \
    template Var<T> attention_head(Var<T>, Var<T>, Var<T>, std::span<const std::uint8_t>, const ForwardOptions&, \
                                   double);                                                                    \
    template Var<T> multi_head(Var<T>, LayerParams<T>&, const EncoderConfig&, std::span<const std::uint8_t>,   \
                               const ForwardOptions&);                                                         \
    template Var<T> encoder_layer(Var<T>, LayerParams<T>&, const EncoderConfig&, std::span<const std::uint8_t>, \
                                  const ForwardOptions&);                                                      \
    template Var<T> encode(ad::Graph<T>&, EncoderParams<T>&, const TokenSequence&, const ForwardOptions&);     \
    template Var<T> encode_content(ad::Graph<T>&, EncoderParams<T>&, const TokenSequence&, const ForwardOptions&); \
    template Tensor<T> encode_eval(EncoderParams<T>&, const TokenSequence&);

BUGPRIO_INSTANTIATE(float)
BUGPRIO_INSTANTIATE(double)
#undef BUGPRIO_INSTANTIATE

template EncoderParams<double> convert_params(const EncoderParams<float>&);
template EncoderParams<float> convert_params(const EncoderParams<double>&);
template EncoderParams<float> convert_params(const EncoderParams<float>&);
template EncoderParams<double> convert_params(const EncoderParams<double>&);

}  // namespace bugprio
