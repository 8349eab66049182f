// SPDX-License-Identifier: Apache-2.0
#include "bugprio/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include <fmt/format.h>

namespace bugprio {

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<std::string> texts_of(const std::vector<BugReport>& reports) {
    std::vector<std::string> out;
    out.reserve(reports.size());
    for (const BugReport& r : reports) {
        out.push_back(compose_text(r));
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) {
        return 0.0;
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Vocabulary build_vocab(const std::vector<BugReport>& reports, std::size_t target_size) {
    return train_bpe(texts_of(reports), target_size);
}

Model<float> init_model(const RunConfig& config, const Vocabulary& vocab) {
    EncoderConfig ec = config.encoder;
    ec.vocab_size = vocab.size();
    Rng rng(mix_seed(config.seed, 2));
    return Model<float>::init(ec, rng);
}

StageHistory run_mlm(Model<float>& model, const std::vector<BugReport>& reports, const Vocabulary& vocab,
                     const RunConfig& config, const TrainLog& log) {
    std::vector<TokenSequence> seqs;
    seqs.reserve(reports.size());
    for (const BugReport& r : reports) {
        seqs.push_back(tokenize(compose_text(r), vocab, model.config().max_len));
    }
    return pretrain_mlm(model, seqs, config.mlm_params(), log);
}

ClHistory run_cl(Model<float>& model, const std::vector<BugReport>& reports, const Vocabulary& vocab,
                 const RunConfig& config, const TrainLog& log) {
    ClRunParams p = config.cl_params(reports.size());
    p.max_len = model.config().max_len;
    return pretrain_cl(model, texts_of(reports), vocab, p, log);
}

PipelineResult run_pipeline(const std::vector<BugReport>& corpus, const RunConfig& config, bool with_cl,
                            const TrainLog& log) {
    config.validate();
    PipelineResult r;
    r.split = split_dataset(corpus, mix_seed(config.seed, 1));

    auto t = Clock::now();
    r.vocab = build_vocab(r.split.train, config.vocab_size);
    r.seconds.vocab = since(t);
    r.model = init_model(config, r.vocab);

    t = Clock::now();
    r.mlm = run_mlm(r.model, r.split.train, r.vocab, config, log);
    r.seconds.mlm = since(t);

    if (with_cl) {
        t = Clock::now();
        r.cl = run_cl(r.model, r.split.train, r.vocab, config, log);
        r.seconds.cl = since(t);
    }

    t = Clock::now();
    r.finetune = finetune(r.model, filter_labeled(r.split.train), filter_labeled(r.split.valid), r.vocab,
                          config.ft_params(), log);
    r.seconds.finetune = since(t);

    t = Clock::now();
    r.train_report = evaluate(r.model, r.vocab, r.split.train, config.ft_max_len, log);
    r.test_report = evaluate(r.model, r.vocab, r.split.test, config.ft_max_len, log);
    r.seconds.evaluate = since(t);
    return r;
}

std::string_view to_string(AblationGrid grid) {
    switch (grid) {
        case AblationGrid::augment:
            return "augment";
        case AblationGrid::lr:
            return "lr";
        case AblationGrid::cl_onoff:
            return "cl-onoff";
    }
    return "?";
}

AblationGrid parse_ablation_grid(std::string_view text) {
    if (text == "augment") {
        return AblationGrid::augment;
    }
    if (text == "lr") {
        return AblationGrid::lr;
    }
    if (text == "cl-onoff") {
        return AblationGrid::cl_onoff;
    }
    throw std::invalid_argument("unknown ablation grid \"" + std::string(text) + "\" (augment|lr|cl-onoff)");
}

double AblationCell::median_weighted_f1() const {
    std::vector<double> v;
    for (const AblationRun& r : runs) {
        v.push_back(r.test_report.weighted.f1);
    }
    return median(v);
}

double AblationCell::median_accuracy() const {
    std::vector<double> v;
    for (const AblationRun& r : runs) {
        v.push_back(r.test_report.accuracy);
    }
    return median(v);
}

nlohmann::ordered_json AblationResult::to_json() const {
    nlohmann::ordered_json j;
    j["grid"] = std::string(to_string(grid));
    nlohmann::ordered_json cells_json = nlohmann::ordered_json::array();
    for (const AblationCell& c : cells) {
        nlohmann::ordered_json runs_json = nlohmann::ordered_json::array();
        for (const AblationRun& r : c.runs) {
            runs_json.push_back({{"seed", r.seed},
                                 {"weighted_f1", r.test_report.weighted.f1},
                                 {"accuracy", r.test_report.accuracy},
                                 {"train_accuracy", r.train_report.accuracy}});
        }
        cells_json.push_back({{"cell", c.label},
                              {"median_weighted_f1", c.median_weighted_f1()},
                              {"median_accuracy", c.median_accuracy()},
                              {"runs", runs_json}});
    }
    j["cells"] = cells_json;
    j["warnings"] = warnings;
    return j;
}

std::string AblationResult::render() const {
    std::string out = fmt::format("ablation grid: {}\n{:<20}{:>14}{:>14}   per-seed weighted F1\n", to_string(grid),
                                  "cell", "weighted F1", "accuracy");
    for (const AblationCell& c : cells) {
        out += fmt::format("{:<20}{:>14.4f}{:>14.4f}  ", c.label, c.median_weighted_f1(), c.median_accuracy());
        for (const AblationRun& r : c.runs) {
            out += fmt::format(" {:.4f}", r.test_report.weighted.f1);
        }
        out += '\n';
    }
    for (const std::string& w : warnings) {
        out += "warning: " + w + "\n";
    }
    return out;
}

AblationResult ablate(AblationGrid grid, const std::vector<BugReport>& corpus, const RunConfig& base,
                      const std::vector<std::uint64_t>& seeds, const TrainLog& log) {
    if (seeds.empty()) {
        throw std::invalid_argument("ablate: need at least one seed");
    }
    base.validate();
    AblationResult result;
    result.grid = grid;

    struct Variant {
        std::string label;
        RunConfig config;
        bool with_cl = true;
    };
    std::vector<Variant> variants;
    switch (grid) {
        case AblationGrid::augment:
            for (AugmentMethod m : {AugmentMethod::mask_one_token, AugmentMethod::delete_one_word,
                                    AugmentMethod::swap_two_words}) {
                RunConfig c = base;
                c.augment = m;
                variants.push_back({std::string(to_string(m)), c, true});
            }
            break;
        case AblationGrid::lr:
            for (double lr : kLearningRateGrid) {
                RunConfig c = base;
                c.ft_lr = lr;
                variants.push_back({fmt::format("lr={}", lr), c, true});
            }
            break;
        case AblationGrid::cl_onoff:
            variants.push_back({"w/ CL", base, true});
            variants.push_back({"w/o CL", base, false});
            break;
    }
    for (const Variant& v : variants) {
        result.cells.push_back({v.label, {}});
    }

    for (std::uint64_t seed : seeds) {
        RunConfig seeded = base;
        seeded.seed = seed;
        const DatasetSplit split = split_dataset(corpus, mix_seed(seed, 1));
        const std::vector<BugReport> train_labeled = filter_labeled(split.train);
        const std::vector<BugReport> valid_labeled = filter_labeled(split.valid);

        auto t = Clock::now();
        const Vocabulary vocab = build_vocab(split.train, seeded.vocab_size);
        Model<float> pre = init_model(seeded, vocab);
        run_mlm(pre, split.train, vocab, seeded, log);
        const double mlm_seconds = since(t);

        // The lr grid shares the contrastive stage too.
        std::optional<Model<float>> shared_cl;
        double shared_cl_seconds = 0.0;
        if (grid == AblationGrid::lr) {
            t = Clock::now();
            shared_cl = pre;
            run_cl(*shared_cl, split.train, vocab, seeded, log);
            shared_cl_seconds = since(t);
        }

        for (std::size_t i = 0; i < variants.size(); ++i) {
            RunConfig cfg = variants[i].config;
            cfg.seed = seed;
            double seconds = mlm_seconds;
            Model<float> model = shared_cl ? *shared_cl : pre;
            seconds += shared_cl_seconds;
            if (variants[i].with_cl && !shared_cl) {
                t = Clock::now();
                run_cl(model, split.train, vocab, cfg, log);
                seconds += since(t);
            }
            t = Clock::now();
            finetune(model, train_labeled, valid_labeled, vocab, cfg.ft_params(), log);
            AblationRun run;
            run.seed = seed;
            run.train_report = evaluate(model, vocab, split.train, cfg.ft_max_len, log);
            run.test_report = evaluate(model, vocab, split.test, cfg.ft_max_len, log);
            run.seconds = seconds + since(t);
            log.event({{"stage", "ablate"},
                       {"grid", std::string(to_string(grid))},
                       {"cell", variants[i].label},
                       {"seed", seed},
                       {"weighted_f1", run.test_report.weighted.f1},
                       {"accuracy", run.test_report.accuracy}});
            result.cells[i].runs.push_back(std::move(run));
        }
    }

    if (grid == AblationGrid::cl_onoff) {
        const double on = result.cells[0].median_weighted_f1();
        const double off = result.cells[1].median_weighted_f1();
        if (on < off) {
            result.warnings.push_back(fmt::format(
                "median weighted F1 with contrastive pre-training ({:.4f}) is below the run without it ({:.4f})", on,
                off));
        }
    }
    for (const std::string& w : result.warnings) {
        log.warn(w);
    }
    return result;
}

}  // namespace bugprio
