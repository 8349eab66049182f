// SPDX-License-Identifier: Apache-2.0
#include "bugprio/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bugprio/mlm.hpp"

namespace bugprio {

Priority PriorityDistribution::argmax() const {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumPriorities; ++c) {
        if (probs[c] > probs[best]) {
            best = c;
        }
    }
    return kAllPriorities[best];
}

bool PriorityDistribution::tied() const {
    const double top = probs[index_of(argmax())];
    return std::count(probs.begin(), probs.end(), top) > 1;
}

nlohmann::ordered_json PriorityDistribution::to_json() const {
    nlohmann::ordered_json probs_json = nlohmann::ordered_json::object();
    for (Priority p : kAllPriorities) {
        probs_json[std::string(to_string(p))] = probs[index_of(p)];
    }
    return {{"priority", std::string(to_string(argmax()))}, {"probs", probs_json}};
}

template <typename T>
Tensor<T> mean_pool(const Tensor<T>& outputs, std::span<const std::uint8_t> pad_mask) {
    if (pad_mask.size() != outputs.rows()) {
        throw ShapeError("mean_pool: mask has " + std::to_string(pad_mask.size()) + " entries for " +
                         std::to_string(outputs.rows()) + " rows");
    }
    Tensor<T> out({1, outputs.cols()});
    std::size_t kept = 0;
    for (std::size_t r = 0; r < outputs.rows(); ++r) {
        if (!pad_mask[r]) {
            continue;
        }
        ++kept;
        for (std::size_t c = 0; c < outputs.cols(); ++c) {
            out[c] += outputs(r, c);
        }
    }
    if (kept == 0) {
        throw std::invalid_argument("mean_pool: every position is padding");
    }
    for (std::size_t c = 0; c < outputs.cols(); ++c) {
        out[c] /= static_cast<T>(kept);
    }
    return out;
}

PriorityDistribution softmax_distribution(std::span<const double> logits) {
    if (logits.size() != kNumPriorities) {
        throw std::invalid_argument("softmax_distribution: expected 5 logits");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    PriorityDistribution d;
    double z = 0.0;
    for (std::size_t c = 0; c < kNumPriorities; ++c) {
        d.probs[c] = std::exp(logits[c] - mx);
        z += d.probs[c];
    }
    for (double& p : d.probs) {
        p /= z;
    }
    return d;
}

template <typename T>
PriorityDistribution classify(Model<T>& model, const TokenSequence& seq) {
    const Tensor<T> hidden = encode_eval(model.encoder, seq);
    const std::vector<std::uint8_t> all(hidden.rows(), 1);
    const Tensor<T> pooled = mean_pool(hidden, std::span<const std::uint8_t>(all));
    const Tensor<T>& w = model.classifier.value;
    std::array<double, kNumPriorities> logits{};
    for (std::size_t c = 0; c < kNumPriorities; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < pooled.cols(); ++k) {
            acc += static_cast<double>(w(c, k)) * static_cast<double>(pooled[k]);
        }
        logits[c] = acc;
    }
    return softmax_distribution(logits);
}

PriorityDistribution predict(Model<float>& model, const Vocabulary& vocab, const BugReport& report,
                             std::size_t max_len) {
    return classify(model, tokenize(compose_text(report), vocab, max_len));
}

namespace {

struct Snapshot {
    std::vector<Tensor<float>> values;

    static Snapshot take(const std::vector<ad::Parameter<float>*>& ps) {
        Snapshot s;
        for (const auto* p : ps) {
            s.values.push_back(p->value);
        }
        return s;
    }

    void restore(const std::vector<ad::Parameter<float>*>& ps) const {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            ps[i]->value = values[i];
        }
    }
};

double weighted_f1(Model<float>& model, const std::vector<TokenSequence>& seqs, const std::vector<Priority>& gold) {
    std::vector<Priority> pred;
    pred.reserve(seqs.size());
    for (const TokenSequence& s : seqs) {
        pred.push_back(classify(model, s).argmax());
    }
    return compute_metrics(gold, pred).weighted.f1;
}

}  // namespace

FinetuneHistory finetune(Model<float>& model, const std::vector<BugReport>& train, const std::vector<BugReport>& valid,
                         const Vocabulary& vocab, const FinetuneParams& params, const TrainLog& log) {
    if (params.batch == 0 || params.epochs == 0) {
        throw std::invalid_argument("finetune: batch and epochs must be positive");
    }
    if (params.max_len > model.config().max_len) {
        throw std::invalid_argument("finetune: max_len exceeds the encoder's max_len");
    }
    std::vector<TokenSequence> seqs;
    std::vector<std::int64_t> labels;
    LabelHistogram hist;
    for (const BugReport& r : train) {
        if (r.priority) {
            seqs.push_back(tokenize(compose_text(r), vocab, params.max_len));
            labels.push_back(static_cast<std::int64_t>(index_of(*r.priority)));
            ++hist.counts[index_of(*r.priority)];
        }
    }
    if (seqs.empty()) {
        throw std::invalid_argument("finetune: training set has no labeled report");
    }
    for (Priority p : kAllPriorities) {
        if (hist[p] == 0) {
            log.warn("finetune: class " + std::string(to_string(p)) + " is absent from the training set");
        }
    }
    std::vector<TokenSequence> valid_seqs;
    std::vector<Priority> valid_gold;
    for (const BugReport& r : valid) {
        if (r.priority) {
            valid_seqs.push_back(tokenize(compose_text(r), vocab, params.max_len));
            valid_gold.push_back(*r.priority);
        }
    }

    Rng rng(params.seed);
    std::vector<ad::Parameter<float>*> ps = model.parameters();
    AdamWState<float> state = AdamWState<float>::for_params(ps);
    const std::size_t per_epoch = (seqs.size() + params.batch - 1) / params.batch;
    const std::size_t total = per_epoch * params.epochs;
    FinetuneHistory history;
    Snapshot best;
    bool have_best = false;
    std::vector<std::size_t> order(seqs.size());

    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        rng.shuffle(order);
        double loss_sum = 0.0;
        double lr = 0.0;
        for (std::size_t start = 0; start < order.size(); start += params.batch) {
            const std::size_t end = std::min(order.size(), start + params.batch);
            model.zero_grad();
            ad::Graph<float> g;
            ForwardOptions opts{Mode::train, &rng};
            std::vector<ad::Var<float>> pooled;
            std::vector<std::int64_t> targets;
            for (std::size_t b = start; b < end; ++b) {
                const TokenSequence& s = seqs[order[b]];
                const std::vector<std::uint8_t> all(s.length, 1);
                pooled.push_back(ad::masked_mean_rows(encode_content(g, model.encoder, s, opts),
                                                      std::span<const std::uint8_t>(all)));
                targets.push_back(labels[order[b]]);
            }
            ad::Var<float> x = ad::concat_rows(std::span<const ad::Var<float>>(pooled));
            ad::Var<float> logits = ad::matmul_nt(x, g.param(model.classifier));
            ad::Var<float> loss = ad::cross_entropy(logits, std::span<const std::int64_t>(targets));
            g.backward(loss);
            lr = stage_lr(history.steps, params.warmup, total, params.lr);
            adamw_step(std::span<ad::Parameter<float>* const>(ps), state, lr, params.adam);
            ++history.steps;
            loss_sum += loss.value()[0] * static_cast<double>(end - start);
        }
        const double epoch_loss = loss_sum / static_cast<double>(seqs.size());
        history.epoch_loss.push_back(epoch_loss);

        nlohmann::ordered_json ev = {{"stage", "finetune"}, {"epoch", epoch + 1}, {"lr", lr}, {"loss", epoch_loss}};
        if (!valid_seqs.empty()) {
            const double f1 = weighted_f1(model, valid_seqs, valid_gold);
            history.valid_f1.push_back(f1);
            ev["valid_weighted_f1"] = f1;
            if (!have_best || f1 >= history.best_valid_f1) {
                best = Snapshot::take(ps);
                have_best = true;
                history.best_valid_f1 = f1;
                history.best_epoch = epoch + 1;
            }
        }
        log.event(ev);
    }
    if (have_best) {
        best.restore(ps);
    } else {
        history.best_epoch = params.epochs;
    }
    return history;
}

EvalReport evaluate(Model<float>& model, const Vocabulary& vocab, const std::vector<BugReport>& test,
                    std::size_t max_len, const TrainLog& log) {
    std::vector<Priority> gold, pred;
    std::vector<std::size_t> lengths;
    std::size_t ties = 0;
    for (const BugReport& r : test) {
        if (!r.priority) {
            continue;
        }
        const std::string text = compose_text(r);
        const PriorityDistribution d = classify(model, tokenize(text, vocab, max_len));
        if (d.tied()) {
            ++ties;
        }
        gold.push_back(*r.priority);
        pred.push_back(d.argmax());
        lengths.push_back(word_count(text));
    }
    if (gold.empty()) {
        throw std::invalid_argument("evaluate: test set has no labeled report");
    }
    if (ties > 0) {
        log.warn("evaluate: " + std::to_string(ties) + " prediction(s) tied; lowest class index chosen");
    }
    EvalReport report = compute_metrics(gold, pred);
    report.length_buckets = bucket_accuracy(lengths, gold, pred);
    report.ties = ties;
    return report;
}

template Tensor<float> mean_pool(const Tensor<float>&, std::span<const std::uint8_t>);
template Tensor<double> mean_pool(const Tensor<double>&, std::span<const std::uint8_t>);
template PriorityDistribution classify(Model<float>&, const TokenSequence&);
template PriorityDistribution classify(Model<double>&, const TokenSequence&);

}  // namespace bugprio
