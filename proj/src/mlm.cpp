// SPDX-License-Identifier: Apache-2.0
#include "bugprio/mlm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bugprio {

std::size_t mask_count(std::size_t content_length, double rate) {
    const auto rounded = static_cast<std::size_t>(std::llround(rate * static_cast<double>(content_length)));
    return std::min(content_length, std::max<std::size_t>(1, rounded));
}

TokenId random_regular_token(std::size_t vocab_size, Rng& rng) {
    if (vocab_size < kFirstMergedId) {
        throw std::invalid_argument("random_regular_token: vocabulary smaller than bytes + specials");
    }
    const std::size_t regular = vocab_size - special::kCount;
    const std::size_t r = rng.index(regular);
    return static_cast<TokenId>(r < kByteTokens ? r : r + special::kCount);
}

MaskedSequence dynamic_mask(const TokenSequence& seq, std::size_t vocab_size, Rng& rng, double rate) {
    const std::size_t n = seq.content_length();
    if (n == 0) {
        throw std::invalid_argument("dynamic_mask: sequence has no content tokens");
    }
    MaskedSequence out;
    out.input = seq;
    out.targets.assign(seq.ids.size(), ad::kIgnoreIndex);

    // Partial Fisher-Yates over content positions 1..n.
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{1});
    const std::size_t m = mask_count(n, rate);
    for (std::size_t i = 0; i < m; ++i) {
        std::swap(pool[i], pool[i + rng.index(n - i)]);
    }
    out.positions.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(out.positions.begin(), out.positions.end());

    for (std::size_t pos : out.positions) {
        out.targets[pos] = seq.ids[pos];
        const double u = rng.uniform();
        if (u < 0.8) {
            out.input.ids[pos] = special::kMask;
            out.actions.push_back(MaskAction::mask);
        } else if (u < 0.9) {
            out.input.ids[pos] = random_regular_token(vocab_size, rng);
            out.actions.push_back(MaskAction::random);
        } else {
            out.actions.push_back(MaskAction::keep);
        }
    }
    return out;
}

std::vector<MaskedSequence> expand_variants(const TokenSequence& seq, std::size_t k, std::size_t vocab_size, Rng& rng,
                                            double rate) {
    if (k == 0) {
        throw std::invalid_argument("expand_variants: k must be at least 1");
    }
    std::vector<MaskedSequence> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back(dynamic_mask(seq, vocab_size, rng, rate));
    }
    return out;
}

template <typename T>
ad::Var<T> mlm_loss(ad::Var<T> logits, std::span<const std::int64_t> targets) {
    if (std::all_of(targets.begin(), targets.end(), [](std::int64_t t) { return t == ad::kIgnoreIndex; })) {
        throw std::invalid_argument("mlm_loss: no masked position in batch");
    }
    return ad::cross_entropy(logits, targets);
}

template <typename T>
ad::Var<T> mlm_logits(Model<T>& model, ad::Var<T> hidden) {
    ad::Graph<T>& g = *hidden.graph;
    ad::Var<T> logits = ad::matmul_nt(hidden, g.param(model.encoder.token_embedding));
    return ad::add_row(logits, g.param(model.mlm_bias));
}

double stage_lr(std::size_t step_index, std::size_t warmup, std::size_t total, double peak) {
    const std::size_t w = std::min(warmup, total);
    return lr_schedule(static_cast<std::int64_t>(step_index + 1), static_cast<std::int64_t>(w),
                       static_cast<std::int64_t>(total + 1), peak);
}

StageHistory pretrain_mlm(Model<float>& model, const std::vector<TokenSequence>& corpus, const MlmRunParams& params,
                          const TrainLog& log) {
    if (params.batch == 0 || params.variants == 0) {
        throw std::invalid_argument("pretrain_mlm: batch and variants must be positive");
    }
    if (!(params.mask_rate > 0.0 && params.mask_rate < 1.0)) {
        throw std::invalid_argument("pretrain_mlm: mask rate must lie in (0, 1)");
    }
    const EncoderConfig& cfg = model.config();
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].ids.size() > cfg.max_len) {
            throw std::invalid_argument("pretrain_mlm: sequence longer than the encoder's max_len");
        }
        if (corpus[i].content_length() > 0) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) {
        throw std::invalid_argument("pretrain_mlm: corpus has no sequence with content tokens");
    }
    if (usable.size() < corpus.size()) {
        log.warn("pretrain_mlm: skipped " + std::to_string(corpus.size() - usable.size()) + " empty sequence(s)");
    }

    Rng rng(params.seed);
    std::vector<ad::Parameter<float>*> ps = model.parameters();
    AdamWState<float> state = AdamWState<float>::for_params(ps);
    StageHistory history;

    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    auto next_item = [&] {
        if (cursor == order.size()) {
            order.clear();
            for (std::size_t v = 0; v < params.variants; ++v) {
                order.insert(order.end(), usable.begin(), usable.end());
            }
            rng.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    };

    for (std::size_t step = 0; step < params.steps; ++step) {
        model.zero_grad();
        ad::Graph<float> g;
        ForwardOptions opts{Mode::train, &rng};
        std::vector<ad::Var<float>> rows;
        std::vector<std::int64_t> targets;
        for (std::size_t b = 0; b < params.batch; ++b) {
            const MaskedSequence ms = dynamic_mask(corpus[next_item()], cfg.vocab_size, rng, params.mask_rate);
            ad::Var<float> hidden = encode_content(g, model.encoder, ms.input, opts);
            rows.push_back(ad::gather_rows(hidden, std::span<const std::size_t>(ms.positions)));
            for (std::size_t pos : ms.positions) {
                targets.push_back(ms.targets[pos]);
            }
        }
        ad::Var<float> hidden = ad::concat_rows(std::span<const ad::Var<float>>(rows));
        ad::Var<float> loss = mlm_loss(mlm_logits(model, hidden), std::span<const std::int64_t>(targets));
        g.backward(loss);
        const double lr = stage_lr(step, params.warmup, params.steps, params.lr);
        adamw_step(std::span<ad::Parameter<float>* const>(ps), state, lr, params.adam);

        const double loss_value = loss.value()[0];
        history.loss.push_back(loss_value);
        history.lr.push_back(lr);
        log.event({{"stage", "mlm"}, {"step", step + 1}, {"lr", lr}, {"loss", loss_value}});
    }
    return history;
}

template ad::Var<float> mlm_loss(ad::Var<float>, std::span<const std::int64_t>);
template ad::Var<double> mlm_loss(ad::Var<double>, std::span<const std::int64_t>);
template ad::Var<float> mlm_logits(Model<float>&, ad::Var<float>);
template ad::Var<double> mlm_logits(Model<double>&, ad::Var<double>);

}  // namespace bugprio
