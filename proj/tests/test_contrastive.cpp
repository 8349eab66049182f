// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "bugprio/contrastive.hpp"
#include "bugprio/corpus.hpp"
#include "bugprio/mlm.hpp"
#include "support.hpp"

using namespace bugprio;

namespace {

std::vector<std::string> words_of(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    std::string w;
    while (in >> w) {
        out.push_back(w);
    }
    return out;
}

std::vector<std::vector<double>> random_rows(Rng& rng, std::size_t n, std::size_t d) {
    std::vector<std::vector<double>> rows(n, std::vector<double>(d));
    for (auto& r : rows) {
        for (double& v : r) {
            v = rng.normal();
        }
    }
    return rows;
}

double cosine(std::span<const float> a, std::span<const float> b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += double(a[i]) * b[i];
        aa += double(a[i]) * a[i];
        bb += double(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// Eval-mode positive similarity minus mean similarity to other reports' positives.
double alignment_gap(Model<float>& model, const std::vector<std::string>& texts, const Vocabulary& vocab,
                     std::size_t max_len) {
    Rng rng(99);
    std::vector<Tensor<float>> anchors, positives;
    for (const auto& t : texts) {
        const TokenSequence a = tokenize(t, vocab, max_len);
        const TokenSequence p = make_positive(t, AugmentMethod::swap_two_words, vocab, max_len, rng);
        ad::Graph<float> g(ad::GradMode::disabled);
        anchors.push_back(represent(g, model.encoder, a, ForwardOptions{}).value());
        positives.push_back(represent(g, model.encoder, p, ForwardOptions{}).value());
    }
    double diag = 0, off = 0;
    const std::size_t n = texts.size();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double c = cosine(anchors[i].values(), positives[j].values());
            (i == j ? diag : off) += c;
        }
    }
    return diag / n - off / (n * (n - 1));
}

}  // namespace

TEST_CASE("swapping the words of a two-word text reverses it") {
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        CHECK(swap_two_words("a b", rng) == "b a");
    }
    CHECK(swap_two_words("  x\ty  ", rng) == "  y\tx  ");
}

TEST_CASE("swap keeps the word multiset and the separators") {
    Rng rng(2);
    const std::string text = "editor  crashes on\tsave of large files";
    for (int i = 0; i < 200; ++i) {
        const std::string out = swap_two_words(text, rng);
        CHECK(out.size() == text.size());
        auto a = words_of(text), b = words_of(out);
        std::size_t moved = 0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            moved += a[k] != b[k];
        }
        CHECK(moved == 2);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
}

TEST_CASE("deletion picks each word with equal frequency") {
    Rng rng(3);
    std::map<std::string, int> seen;
    const int trials = 3000;
    for (int i = 0; i < trials; ++i) {
        ++seen[delete_one_word("a b c", rng)];
    }
    REQUIRE(seen.size() == 3);
    for (const char* expected : {"b c", "a c", "a b"}) {
        CHECK(double(seen[expected]) / trials == doctest::Approx(1.0 / 3.0).epsilon(0.09));
    }
}

TEST_CASE("deletion removes exactly one word") {
    Rng rng(4);
    const std::string text = "NPE when  saving\tproject settings";
    const auto original = words_of(text);
    for (int i = 0; i < 200; ++i) {
        const auto after = words_of(delete_one_word(text, rng));
        REQUIRE(after.size() == original.size() - 1);
        std::size_t k = 0;
        while (k < after.size() && after[k] == original[k]) {
            ++k;
        }
        for (std::size_t m = k; m < after.size(); ++m) {
            CHECK(after[m] == original[m + 1]);
        }
    }
}

TEST_CASE("augmentations reject texts that are too short") {
    Rng rng(5);
    CHECK_THROWS_AS(swap_two_words("single", rng), AugmentError);
    CHECK_THROWS_AS(delete_one_word("  single ", rng), AugmentError);
    CHECK_THROWS_AS(swap_two_words("", rng), AugmentError);
    CHECK_THROWS_AS(mask_one_token(frame(std::span<const TokenId>{}, 5), rng), AugmentError);
    CHECK(parse_augment_method("delete") == AugmentMethod::delete_one_word);
    CHECK(to_string(AugmentMethod::mask_one_token) == "mask");
    CHECK_THROWS_AS(parse_augment_method("crop"), std::invalid_argument);
}

TEST_CASE("token masking replaces exactly one content token") {
    Rng rng(6);
    const std::vector<TokenId> ids = {10, 11, 12, 13};
    const TokenSequence seq = frame(ids, 8);
    std::vector<int> hits(4, 0);
    for (int i = 0; i < 400; ++i) {
        const TokenSequence m = mask_one_token(seq, rng);
        std::size_t changed = 0;
        for (std::size_t p = 0; p < seq.ids.size(); ++p) {
            if (m.ids[p] != seq.ids[p]) {
                ++changed;
                CHECK(m.ids[p] == special::kMask);
                CHECK(p >= 1);
                CHECK(p <= 4);
                ++hits[p - 1];
            }
        }
        CHECK(changed == 1);
    }
    for (int h : hits) {
        CHECK(h > 60);
    }
    const Vocabulary vocab;
    const TokenSequence pos = make_positive("ab", AugmentMethod::mask_one_token, vocab, 8, rng);
    CHECK(std::count(pos.ids.begin(), pos.ids.end(), special::kMask) == 1);
    CHECK(pos.length == 4);
}

TEST_CASE("representation is the mean over attended encoder rows") {
    EncoderConfig c;
    c.layers = 1;
    c.heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.max_len = 10;
    c.vocab_size = 270;
    Rng rng(7);
    EncoderParams<double> p = EncoderParams<double>::init(c, rng);
    const std::vector<TokenId> ids = {1, 2, 3};
    const TokenSequence seq = frame(ids, c.max_len);
    const Tensor<double> rows = encode_eval(p, seq);
    ad::Graph<double> g;
    const Tensor<double> r = represent(g, p, seq, ForwardOptions{}).value();
    REQUIRE(r.shape() == Shape{1, 8});
    for (std::size_t d = 0; d < 8; ++d) {
        double mean = 0;
        for (std::size_t i = 0; i < seq.length; ++i) {
            mean += rows(i, d);
        }
        CHECK(r[d] == doctest::Approx(mean / seq.length).epsilon(1e-12));
    }
}

TEST_CASE("contrastive loss identities") {
    CHECK(cl_loss({{1.0, 2.0}}, {{-3.0, 0.5}}, 0.05) == doctest::Approx(0.0).epsilon(1e-12));
    const double two = cl_loss({{1, 0}, {0, 1}}, {{1, 0}, {0, 1}}, 1.0);
    CHECK(two == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK_THROWS_AS(cl_loss({{1, 0}}, {{1, 0}}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(cl_loss({{1, 0}}, {{1, 0}, {0, 1}}, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(cl_loss({}, {}, 0.1), std::invalid_argument);
}

TEST_CASE("contrastive loss matches a brute-force oracle") {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng.index(8), d = 1 + rng.index(10);
        const auto a = random_rows(rng, n, d), p = random_rows(rng, n, d);
        const double tau = 0.02 + rng.uniform();
        const double loss = cl_loss(a, p, tau);
        CHECK(loss == doctest::Approx(testing::oracle_cl_loss(a, p, tau)).epsilon(1e-9));
        CHECK(loss >= -1e-12);
    }
}

TEST_CASE("contrastive loss ignores row scale and grows with temperature when positives dominate") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + rng.index(6), d = 4 + rng.index(6);
        auto a = random_rows(rng, n, d);
        auto p = a;
        for (auto& r : p) {
            for (double& v : r) {
                v += 0.05 * rng.normal();
            }
        }
        auto scaled = a;
        for (auto& r : scaled) {
            const double s = 0.1 + 10 * rng.uniform();
            for (double& v : r) {
                v *= s;
            }
        }
        CHECK(cl_loss(scaled, p, 0.1) == doctest::Approx(cl_loss(a, p, 0.1)).epsilon(1e-10));
        double previous = -1.0;
        for (double tau : {0.01, 0.05, 0.1, 0.5, 1.0, 5.0}) {
            const double loss = cl_loss(a, p, tau);
            CHECK(loss > previous);
            previous = loss;
        }
    }
}

TEST_CASE("contrastive loss gradients pass a finite-difference check") {
    Rng rng(10);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor<double> positives = testing::random_tensor({4, 6}, rng);
        const Tensor<double> anchors = testing::random_tensor({4, 6}, rng);
        auto wrt_anchors = [&](ad::Graph<double>& g, ad::Var<double> x) {
            return cl_loss(x, g.constant(positives), 0.5);
        };
        auto wrt_positives = [&](ad::Graph<double>& g, ad::Var<double> x) {
            return cl_loss(g.constant(anchors), x, 0.5);
        };
        CHECK(ad::grad_check(wrt_anchors, anchors) < 1e-6);
        CHECK(ad::grad_check(wrt_positives, positives) < 1e-6);
    }
}

TEST_CASE("contrastive pre-training skips short texts and logs every step") {
    EncoderConfig c;
    c.layers = 1;
    c.heads = 2;
    c.d_model = 8;
    c.d_ff = 16;
    c.max_len = 16;
    c.vocab_size = 270;
    Rng rng(11);
    Model<float> model = Model<float>::init(c, rng);
    const Vocabulary vocab = train_bpe({"crash on save", "crash on load"}, 270);
    const std::vector<std::string> texts = {"crash on save", "lonely", "hang on load", "NPE in editor"};
    ClRunParams p;
    p.batch = 8;
    p.steps = 4;
    p.max_len = 16;
    std::ostringstream events, warnings;
    const ClHistory h = pretrain_cl(model, texts, vocab, p, TrainLog{&events, &warnings});
    CHECK(h.skipped == 1);
    CHECK(h.loss.size() == 4);
    CHECK(h.alignment.size() == 4);
    CHECK(warnings.str().find("skipped 1") != std::string::npos);
    const auto first = nlohmann::json::parse(events.str().substr(0, events.str().find('\n')));
    CHECK(first["stage"] == "cl");
    CHECK(first["step"] == 1);
    for (const char* key : {"lr", "loss", "alignment", "uniformity"}) {
        CHECK(first.contains(key));
    }
    CHECK_THROWS_AS(pretrain_cl(model, {"one", "two"}, vocab, p), std::invalid_argument);
    p.max_len = 64;
    CHECK_THROWS_AS(pretrain_cl(model, texts, vocab, p), std::invalid_argument);
}

TEST_CASE("contrastive pre-training separates positives from other reports") {
    SyntheticCorpusOptions o;
    o.size = 60;
    o.seed = 5;
    std::vector<std::string> texts;
    for (const auto& r : synthesize_corpus(o)) {
        texts.push_back(compose_text(r));
    }
    const Vocabulary vocab = train_bpe(texts, 400);
    EncoderConfig c;
    c.layers = 1;
    c.heads = 2;
    c.d_model = 32;
    c.d_ff = 64;
    c.max_len = 32;
    c.vocab_size = vocab.size();
    std::vector<TokenSequence> seqs;
    for (const auto& t : texts) {
        seqs.push_back(tokenize(t, vocab, c.max_len));
    }
    const std::vector<std::string> probe(texts.begin(), texts.begin() + 24);
    int improved = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        Rng init(seed);
        Model<float> model = Model<float>::init(c, init);
        MlmRunParams mp;
        mp.batch = 8;
        mp.steps = 100;
        mp.seed = seed;
        pretrain_mlm(model, seqs, mp);
        const double before = alignment_gap(model, probe, vocab, c.max_len);
        ClRunParams cp;
        cp.batch = 16;
        cp.steps = 60;
        cp.lr = 1e-3;
        cp.warmup = 6;
        cp.max_len = c.max_len;
        cp.seed = seed;
        pretrain_cl(model, texts, vocab, cp);
        const double after = alignment_gap(model, probe, vocab, c.max_len);
        MESSAGE("seed " << seed << ": gap " << before << " -> " << after);
        improved += after > before;
    }
    CHECK(improved >= 2);
}
