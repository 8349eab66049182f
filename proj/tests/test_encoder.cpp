// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "bugprio/encoder.hpp"
#include "support.hpp"

using namespace bugprio;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor<double>& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) {
            m[r][c] = t(r, c);
        }
    }
    return m;
}

Mat mm(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < b.size(); ++k) {
            for (std::size_t j = 0; j < b[0].size(); ++j) {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    return out;
}

Mat ref_attention(const Mat& q, const Mat& k, const Mat& v, const std::vector<std::uint8_t>& mask) {
    const double s = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
    Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<double> w(k.size(), 0.0);
        double top = -1e300;
        for (std::size_t j = 0; j < k.size(); ++j) {
            if (!mask.empty() && !mask[j]) {
                continue;
            }
            double dot = 0;
            for (std::size_t c = 0; c < q[0].size(); ++c) {
                dot += q[i][c] * k[j][c];
            }
            w[j] = dot * s;
            top = std::max(top, w[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < k.size(); ++j) {
            w[j] = (!mask.empty() && !mask[j]) ? 0.0 : std::exp(w[j] - top);
            z += w[j];
        }
        for (std::size_t j = 0; j < k.size(); ++j) {
            for (std::size_t c = 0; c < v[0].size(); ++c) {
                out[i][c] += w[j] / z * v[j][c];
            }
        }
    }
    return out;
}

Mat ref_add_ln(const Mat& a, const Mat& b, const Tensor<double>& gain, const Tensor<double>& bias, double eps) {
    Mat out = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const std::size_t d = a[i].size();
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < d; ++c) {
            out[i][c] = a[i][c] + b[i][c];
            mean += out[i][c];
        }
        mean /= d;
        for (std::size_t c = 0; c < d; ++c) {
            var += (out[i][c] - mean) * (out[i][c] - mean);
        }
        var /= d;
        for (std::size_t c = 0; c < d; ++c) {
            out[i][c] = gain[c] * (out[i][c] - mean) / std::sqrt(var + eps) + bias[c];
        }
    }
    return out;
}

Mat ref_layer(const Mat& x, LayerParams<double>& l, const EncoderConfig& c, const std::vector<std::uint8_t>& mask) {
    const Mat q = mm(x, to_mat(l.w_q.value)), k = mm(x, to_mat(l.w_k.value)), v = mm(x, to_mat(l.w_v.value));
    Mat joined(x.size());
    for (std::size_t h = 0; h < c.heads; ++h) {
        const Mat head = ref_attention(mm(q, to_mat(l.head_q[h].value)), mm(k, to_mat(l.head_k[h].value)),
                                       mm(v, to_mat(l.head_v[h].value)), mask);
        for (std::size_t i = 0; i < x.size(); ++i) {
            joined[i].insert(joined[i].end(), head[i].begin(), head[i].end());
        }
    }
    const Mat o = ref_add_ln(x, mm(joined, to_mat(l.w_o.value)), l.ln1_gain.value, l.ln1_bias.value,
                             c.layer_norm_epsilon);
    Mat hidden = mm(o, to_mat(l.w_1.value));
    for (auto& row : hidden) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] = std::max(0.0, row[j] + l.b_1.value[j]);
        }
    }
    Mat ffn = mm(hidden, to_mat(l.w_2.value));
    for (auto& row : ffn) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            row[j] += l.b_2.value[j];
        }
    }
    return ref_add_ln(o, ffn, l.ln2_gain.value, l.ln2_bias.value, c.layer_norm_epsilon);
}

Mat ref_encode(EncoderParams<double>& p, const TokenSequence& seq) {
    Mat x(seq.ids.size(), std::vector<double>(p.config.d_model));
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        for (std::size_t c = 0; c < p.config.d_model; ++c) {
            x[i][c] = p.token_embedding.value(seq.ids[i], c) + p.position_embedding.value(i, c);
        }
    }
    for (auto& l : p.layers) {
        x = ref_layer(x, l, p.config, seq.attention_mask);
    }
    return x;
}

EncoderConfig small_config() {
    EncoderConfig c;
    c.layers = 2;
    c.heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.max_len = 12;
    c.vocab_size = 270;
    return c;
}

EncoderParams<double> noisy_params(const EncoderConfig& c, Rng& rng) {
    EncoderParams<double> p = EncoderParams<double>::init(c, rng);
    for (auto& [name, param] : p.named_parameters()) {
        for (double& v : param->value.values()) {
            v += 0.3 * rng.normal();
        }
    }
    return p;
}

TokenSequence random_sequence(const EncoderConfig& c, Rng& rng, std::size_t content) {
    std::vector<TokenId> ids(content);
    for (TokenId& id : ids) {
        id = static_cast<TokenId>(rng.index(c.vocab_size));
    }
    return frame(ids, c.max_len);
}

double max_diff(const Tensor<double>& t, const Mat& m, std::size_t rows) {
    double worst = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < t.cols(); ++c) {
            worst = std::max(worst, std::abs(t(r, c) - m[r][c]));
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("config validation and the paper-scale preset") {
    EncoderConfig c = small_config();
    CHECK_NOTHROW(c.validate());
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.vocab_size = 260;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.max_len = 2;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = small_config();
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);

    const EncoderConfig paper = EncoderConfig::paper_scale(50265);
    CHECK(paper.layers == 12);
    CHECK(paper.heads == 12);
    CHECK(paper.d_model == 768);
    CHECK(paper.d_ff == 3072);
    CHECK(paper.max_len == 512);
    CHECK(paper.head_dim() == 64);
}

TEST_CASE("initial weights follow N(0, 0.02), biases 0, gains 1") {
    EncoderConfig c = small_config();
    c.d_model = 32;
    c.d_ff = 64;
    Rng rng(1);
    EncoderParams<double> p = EncoderParams<double>::init(c, rng);
    double sum = 0, sq = 0;
    std::size_t n = 0;
    for (double v : p.token_embedding.value.values()) {
        sum += v;
        sq += v * v;
        ++n;
    }
    CHECK(std::abs(sum / n) < 0.002);
    CHECK(std::sqrt(sq / n) == doctest::Approx(0.02).epsilon(0.05));
    for (double v : p.layers[0].b_1.value.values()) {
        CHECK(v == 0.0);
    }
    for (double v : p.layers[1].ln2_gain.value.values()) {
        CHECK(v == 1.0);
    }
    CHECK(p.layers[0].head_q[0].value.shape() == Shape{32, 16});
}

TEST_CASE("embedding adds token and position rows") {
    const EncoderConfig c = small_config();
    Rng rng(2);
    EncoderParams<double> p = EncoderParams<double>::init(c, rng);
    ad::Graph<double> g;
    const std::vector<TokenId> ids = {256, 7, 7, 269};
    const Tensor<double>& x = embed(g, p, std::span<const TokenId>(ids)).value();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t d = 0; d < c.d_model; ++d) {
            CHECK(x(i, d) == p.token_embedding.value(ids[i], d) + p.position_embedding.value(i, d));
        }
    }
    const std::vector<TokenId> bad = {270};
    CHECK_THROWS_AS(embed(g, p, std::span<const TokenId>(bad)), std::out_of_range);
    const std::vector<TokenId> too_long(c.max_len + 1, 5);
    CHECK_THROWS_AS(embed(g, p, std::span<const TokenId>(too_long)), std::out_of_range);
}

TEST_CASE("attention head matches a loop reference and ignores masked keys") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 2 + rng.index(6), dk = 1 + rng.index(5), dv = 1 + rng.index(5);
        const Tensor<double> q = testing::random_tensor({n, dk}, rng);
        const Tensor<double> k = testing::random_tensor({n, dk}, rng);
        Tensor<double> v = testing::random_tensor({n, dv}, rng);
        std::vector<std::uint8_t> mask(n, 1);
        mask[n - 1] = 0;
        ad::Graph<double> g;
        const Tensor<double> out =
            attention_head(g.constant(q), g.constant(k), g.constant(v), mask, ForwardOptions{}).value();
        CHECK(max_diff(out, ref_attention(to_mat(q), to_mat(k), to_mat(v), mask), n) < 1e-12);

        for (std::size_t c = 0; c < dv; ++c) {
            v(n - 1, c) += 100.0;
        }
        const Tensor<double> moved =
            attention_head(g.constant(q), g.constant(k), g.constant(v), mask, ForwardOptions{}).value();
        CHECK(max_diff(moved, to_mat(out), n) < 1e-12);
    }
}

TEST_CASE("full encoder matches a loop reference") {
    const EncoderConfig c = small_config();
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        EncoderParams<double> p = noisy_params(c, rng);
        const TokenSequence seq = random_sequence(c, rng, 1 + rng.index(c.max_len - 2));
        ad::Graph<double> g;
        const Tensor<double> out = encode(g, p, seq, ForwardOptions{}).value();
        CHECK(out.shape() == Shape{c.max_len, c.d_model});
        CHECK(max_diff(out, ref_encode(p, seq), seq.length) < 1e-10);
    }
}

TEST_CASE("with no layers the encoder is the embedding") {
    EncoderConfig c = small_config();
    c.layers = 0;
    Rng rng(5);
    EncoderParams<double> p = EncoderParams<double>::init(c, rng);
    const TokenSequence seq = random_sequence(c, rng, 5);
    ad::Graph<double> g;
    CHECK(encode(g, p, seq, ForwardOptions{}).value() == embed(g, p, std::span<const TokenId>(seq.ids)).value());
}

TEST_CASE("pad tokens do not affect attended rows") {
    const EncoderConfig c = small_config();
    Rng rng(6);
    EncoderParams<double> p = noisy_params(c, rng);
    TokenSequence seq = random_sequence(c, rng, 4);
    ad::Graph<double> g;
    const Tensor<double> base = encode(g, p, seq, ForwardOptions{}).value();
    for (std::size_t i = seq.length; i < c.max_len; ++i) {
        seq.ids[i] = static_cast<TokenId>(rng.index(c.vocab_size));
    }
    const Tensor<double> changed = encode(g, p, seq, ForwardOptions{}).value();
    CHECK(max_diff(changed, to_mat(base), seq.length) < 1e-12);
}

TEST_CASE("encode_content equals the attended prefix of encode") {
    const EncoderConfig c = small_config();
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        EncoderParams<double> p = noisy_params(c, rng);
        const TokenSequence seq = random_sequence(c, rng, rng.index(c.max_len));
        ad::Graph<double> g;
        const Tensor<double> full = encode(g, p, seq, ForwardOptions{}).value();
        const Tensor<double> prefix = encode_content(g, p, seq, ForwardOptions{}).value();
        REQUIRE(prefix.rows() == seq.length);
        CHECK(max_diff(prefix, to_mat(full), seq.length) < 1e-12);
        CHECK(encode_eval(p, seq) == prefix);
    }
}

TEST_CASE("without position embeddings the encoder is permutation equivariant") {
    const EncoderConfig c = small_config();
    Rng rng(8);
    EncoderParams<double> p = noisy_params(c, rng);
    p.position_embedding.value.fill(0.0);
    TokenSequence seq = random_sequence(c, rng, c.max_len - 2);
    std::vector<std::size_t> perm(c.max_len);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    TokenSequence permuted = seq;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        permuted.ids[i] = seq.ids[perm[i]];
    }
    ad::Graph<double> g;
    const Tensor<double> a = encode(g, p, seq, ForwardOptions{}).value();
    const Tensor<double> b = encode(g, p, permuted, ForwardOptions{}).value();
    for (std::size_t i = 0; i < perm.size(); ++i) {
        for (std::size_t d = 0; d < c.d_model; ++d) {
            CHECK(b(i, d) == doctest::Approx(a(perm[i], d)).epsilon(1e-10));
        }
    }
}

TEST_CASE("forward passes are deterministic; train mode needs a generator") {
    const EncoderConfig c = small_config();
    Rng rng(9);
    EncoderParams<double> p = noisy_params(c, rng);
    const TokenSequence seq = random_sequence(c, rng, 6);
    CHECK(encode_eval(p, seq) == encode_eval(p, seq));
    auto train_run = [&](std::uint64_t seed) {
        Rng drop(seed);
        ad::Graph<double> g;
        return encode(g, p, seq, ForwardOptions{Mode::train, &drop}).value();
    };
    CHECK(train_run(11) == train_run(11));
    CHECK_FALSE(train_run(11) == train_run(12));
    ad::Graph<double> g;
    CHECK_THROWS_AS(encode(g, p, seq, ForwardOptions{Mode::train, nullptr}), std::invalid_argument);
}

TEST_CASE("float and double encoders agree") {
    const EncoderConfig c = small_config();
    Rng rng(10);
    EncoderParams<double> p = EncoderParams<double>::init(c, rng);
    EncoderParams<float> f = convert_params<float>(p);
    const TokenSequence seq = random_sequence(c, rng, 7);
    const Tensor<double> a = encode_eval(p, seq);
    const Tensor<float> b = encode_eval(f, seq);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a[i] - b[i]) < 1e-4);
    }
}

TEST_CASE("encoder gradients pass a finite-difference check") {
    const EncoderConfig c = small_config();
    CHECK(testing::check_encoder(c, 2, 4, 13) < 1e-4);
}
