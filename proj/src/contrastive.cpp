// SPDX-License-Identifier: Apache-2.0
#include "bugprio/contrastive.hpp"

#include <cctype>
#include <cmath>
#include <numeric>
#include <utility>

#include "bugprio/mlm.hpp"

namespace bugprio {

namespace {

struct Span {
    std::size_t begin;
    std::size_t end;
};

std::vector<Span> word_spans(std::string_view text) {
    std::vector<Span> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        if (i == text.size()) {
            break;
        }
        const std::size_t b = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
        }
        out.push_back({b, i});
    }
    return out;
}

bool augmentable(std::string_view text, AugmentMethod method) {
    if (method == AugmentMethod::mask_one_token) {
        return word_spans(text).size() >= 1;
    }
    return word_spans(text).size() >= 2;
}

}  // namespace

std::string_view to_string(AugmentMethod method) {
    switch (method) {
        case AugmentMethod::swap_two_words:
            return "swap";
        case AugmentMethod::delete_one_word:
            return "delete";
        case AugmentMethod::mask_one_token:
            return "mask";
    }
    return "?";
}

AugmentMethod parse_augment_method(std::string_view text) {
    if (text == "swap") {
        return AugmentMethod::swap_two_words;
    }
    if (text == "delete") {
        return AugmentMethod::delete_one_word;
    }
    if (text == "mask") {
        return AugmentMethod::mask_one_token;
    }
    throw std::invalid_argument("unknown augmentation method \"" + std::string(text) + "\" (swap|delete|mask)");
}

std::string swap_two_words(std::string_view text, Rng& rng) {
    const std::vector<Span> words = word_spans(text);
    if (words.size() < 2) {
        throw AugmentError("swap_two_words: need at least 2 words, got " + std::to_string(words.size()));
    }
    std::size_t i = rng.index(words.size());
    std::size_t j = rng.index(words.size() - 1);
    if (j >= i) {
        ++j;
    }
    if (i > j) {
        std::swap(i, j);
    }
    const Span a = words[i], b = words[j];
    std::string out;
    out.reserve(text.size());
    out += text.substr(0, a.begin);
    out += text.substr(b.begin, b.end - b.begin);
    out += text.substr(a.end, b.begin - a.end);
    out += text.substr(a.begin, a.end - a.begin);
    out += text.substr(b.end);
    return out;
}

std::string delete_one_word(std::string_view text, Rng& rng) {
    const std::vector<Span> words = word_spans(text);
    if (words.size() < 2) {
        throw AugmentError("delete_one_word: need at least 2 words, got " + std::to_string(words.size()));
    }
    const std::size_t w = rng.index(words.size());
    std::size_t cut_begin, cut_end;
    if (w + 1 < words.size()) {
        cut_begin = words[w].begin;
        cut_end = words[w + 1].begin;
    } else {
        cut_begin = words[w - 1].end;
        cut_end = words[w].end;
    }
    std::string out(text.substr(0, cut_begin));
    out += text.substr(cut_end);
    return out;
}

TokenSequence mask_one_token(const TokenSequence& seq, Rng& rng) {
    if (seq.content_length() == 0) {
        throw AugmentError("mask_one_token: sequence has no content tokens");
    }
    TokenSequence out = seq;
    out.ids[1 + rng.index(seq.content_length())] = special::kMask;
    return out;
}

TokenSequence make_positive(std::string_view text, AugmentMethod method, const Vocabulary& vocab, std::size_t max_len,
                            Rng& rng) {
    switch (method) {
        case AugmentMethod::swap_two_words:
            return tokenize(swap_two_words(text, rng), vocab, max_len);
        case AugmentMethod::delete_one_word:
            return tokenize(delete_one_word(text, rng), vocab, max_len);
        case AugmentMethod::mask_one_token:
            return mask_one_token(tokenize(text, vocab, max_len), rng);
    }
    throw std::logic_error("make_positive: unhandled method");
}

template <typename T>
ad::Var<T> represent(ad::Graph<T>& g, EncoderParams<T>& params, const TokenSequence& seq, const ForwardOptions& opts) {
    ad::Var<T> out = encode_content(g, params, seq, opts);
    const std::vector<std::uint8_t> all(seq.length, 1);
    return ad::masked_mean_rows(out, std::span<const std::uint8_t>(all));
}

template <typename T>
ad::Var<T> cl_loss(ad::Var<T> anchors, ad::Var<T> positives, double tau) {
    if (!(tau > 0.0)) {
        throw std::invalid_argument("cl_loss: temperature must be positive");
    }
    if (anchors.shape() != positives.shape()) {
        throw ShapeError("cl_loss", anchors.shape(), positives.shape());
    }
    const std::size_t n = anchors.value().rows();
    if (n == 0) {
        throw std::invalid_argument("cl_loss: empty batch");
    }
    ad::Var<T> sim = ad::matmul_nt(ad::l2_normalize_rows(anchors), ad::l2_normalize_rows(positives));
    std::vector<std::int64_t> targets(n);
    std::iota(targets.begin(), targets.end(), std::int64_t{0});
    return ad::cross_entropy(ad::scale(sim, static_cast<T>(1.0 / tau)), std::span<const std::int64_t>(targets));
}

double cl_loss(const std::vector<std::vector<double>>& anchors, const std::vector<std::vector<double>>& positives,
               double tau) {
    if (anchors.empty() || anchors.size() != positives.size()) {
        throw std::invalid_argument("cl_loss: need equally many (>= 1) anchors and positives");
    }
    const std::size_t d = anchors[0].size();
    auto pack = [d](const std::vector<std::vector<double>>& rows) {
        std::vector<double> flat;
        for (const auto& r : rows) {
            if (r.size() != d) {
                throw ShapeError("cl_loss: representations differ in width");
            }
            flat.insert(flat.end(), r.begin(), r.end());
        }
        return Tensor<double>({rows.size(), d}, std::move(flat));
    };
    ad::Graph<double> g(ad::GradMode::disabled);
    return cl_loss(g.constant(pack(anchors)), g.constant(pack(positives)), tau).value()[0];
}

ClHistory pretrain_cl(Model<float>& model, const std::vector<std::string>& texts, const Vocabulary& vocab,
                      const ClRunParams& params, const TrainLog& log) {
    if (params.batch == 0) {
        throw std::invalid_argument("pretrain_cl: batch must be positive");
    }
    if (params.max_len > model.config().max_len) {
        throw std::invalid_argument("pretrain_cl: max_len exceeds the encoder's max_len");
    }
    ClHistory history;
    std::vector<std::size_t> usable;
    std::vector<TokenSequence> anchors(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (!augmentable(texts[i], params.method)) {
            ++history.skipped;
            continue;
        }
        anchors[i] = tokenize(texts[i], vocab, params.max_len);
        if (anchors[i].content_length() == 0) {
            ++history.skipped;
            continue;
        }
        usable.push_back(i);
    }
    if (history.skipped > 0) {
        log.warn("pretrain_cl: skipped " + std::to_string(history.skipped) + " report(s) too short for " +
                 std::string(to_string(params.method)));
    }
    if (usable.empty()) {
        throw std::invalid_argument("pretrain_cl: no report can be augmented");
    }

    Rng rng(params.seed);
    std::vector<ad::Parameter<float>*> ps = model.parameters();
    AdamWState<float> state = AdamWState<float>::for_params(ps);
    std::vector<std::size_t> order;
    std::size_t cursor = 0;

    for (std::size_t step = 0; step < params.steps; ++step) {
        model.zero_grad();
        ad::Graph<float> g;
        ForwardOptions opts{Mode::train, &rng};
        std::vector<ad::Var<float>> rs, rps;
        for (std::size_t b = 0; b < params.batch && b < usable.size(); ++b) {
            if (cursor == order.size()) {
                order = usable;
                rng.shuffle(order);
                cursor = 0;
            }
            const std::size_t idx = order[cursor++];
            const TokenSequence positive = make_positive(texts[idx], params.method, vocab, params.max_len, rng);
            rs.push_back(represent(g, model.encoder, anchors[idx], opts));
            rps.push_back(represent(g, model.encoder, positive, opts));
        }
        ad::Var<float> a = ad::concat_rows(std::span<const ad::Var<float>>(rs));
        ad::Var<float> p = ad::concat_rows(std::span<const ad::Var<float>>(rps));
        ad::Var<float> loss = cl_loss(a, p, params.tau);
        g.backward(loss);
        const double lr = stage_lr(step, params.warmup, params.steps, params.lr);
        adamw_step(std::span<ad::Parameter<float>* const>(ps), state, lr, params.adam);

        // Diagnostics from the forward values.
        const Tensor<float>& av = a.value();
        const Tensor<float>& pv = p.value();
        const std::size_t n = av.rows(), d = av.cols();
        std::vector<std::vector<double>> unit(n, std::vector<double>(d));
        double align = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double aa = 0, pp = 0, ap = 0;
            for (std::size_t c = 0; c < d; ++c) {
                aa += double(av(i, c)) * av(i, c);
                pp += double(pv(i, c)) * pv(i, c);
                ap += double(av(i, c)) * pv(i, c);
            }
            align += ap / std::sqrt(aa * pp);
            for (std::size_t c = 0; c < d; ++c) {
                unit[i][c] = av(i, c) / std::sqrt(aa);
            }
        }
        align /= static_cast<double>(n);
        double uni_sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double dist2 = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    dist2 += (unit[i][c] - unit[j][c]) * (unit[i][c] - unit[j][c]);
                }
                uni_sum += std::exp(-2.0 * dist2);
                ++pairs;
            }
        }
        const double uniformity = pairs ? std::log(uni_sum / static_cast<double>(pairs)) : 0.0;

        const double loss_value = loss.value()[0];
        history.loss.push_back(loss_value);
        history.lr.push_back(lr);
        history.alignment.push_back(align);
        history.uniformity.push_back(uniformity);
        log.event({{"stage", "cl"},
                   {"step", step + 1},
                   {"lr", lr},
                   {"loss", loss_value},
                   {"alignment", align},
                   {"uniformity", uniformity}});
    }
    return history;
}

template ad::Var<float> represent(ad::Graph<float>&, EncoderParams<float>&, const TokenSequence&,
                                  const ForwardOptions&);
template ad::Var<double> represent(ad::Graph<double>&, EncoderParams<double>&, const TokenSequence&,
                                   const ForwardOptions&);
template ad::Var<float> cl_loss(ad::Var<float>, ad::Var<float>, double);
template ad::Var<double> cl_loss(ad::Var<double>, ad::Var<double>, double);

}  // namespace bugprio
