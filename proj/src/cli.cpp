// SPDX-License-Identifier: Apache-2.0
#include "bugprio/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "bugprio/checkpoint.hpp"
#include "bugprio/classifier.hpp"
#include "bugprio/config.hpp"
#include "bugprio/corpus.hpp"
#include "bugprio/pipeline.hpp"

namespace bugprio {

namespace {

struct ConfigFlags {
    std::string path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
};

void add_config_flags(CLI::App* sub, ConfigFlags& f) {
    sub->add_option("--config", f.path, "key = value configuration file");
    sub->add_option("--set", f.sets, "override one configuration key (key=value); repeatable");
    sub->add_option("--seed", f.seed, "master seed");
}

RunConfig resolve_config(const ConfigFlags& f) {
    RunConfig c = f.path.empty() ? RunConfig::desk() : load_config(f.path);
    for (const std::string& kv : f.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got \"" + kv + "\"");
        }
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (f.seed) {
        c.seed = *f.seed;
    }
    return c;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << text;
}

std::string read_stream(std::istream& in) {
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Adopts the encoder shape stored in a checkpoint.
RunConfig with_checkpoint_encoder(RunConfig cfg, const Checkpoint& ck, const TrainLog& log) {
    EncoderConfig stored = ck.model.config();
    EncoderConfig requested = cfg.encoder;
    requested.vocab_size = stored.vocab_size;
    if (!(requested == stored)) {
        log.warn("encoder settings in the configuration differ from the checkpoint; using the checkpoint's");
    }
    cfg.encoder = stored;
    cfg.ft_max_len = std::min(cfg.ft_max_len, stored.max_len);
    cfg.validate();
    return cfg;
}

std::size_t default_max_len(const Checkpoint& ck) {
    const auto& run = ck.run;
    if (run.contains("config") && run["config"].contains("ft_max_len")) {
        return std::min(run["config"]["ft_max_len"].get<std::size_t>(), ck.model.config().max_len);
    }
    return std::min<std::size_t>(256, ck.model.config().max_len);
}

nlohmann::ordered_json manifest(const RunConfig& cfg, nlohmann::ordered_json stage_params) {
    return {{"config", cfg.to_json()}, {"stage_params", std::move(stage_params)}};
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bug report priority inference: byte-level BPE, encoder pre-training, fine-tuning, evaluation",
                 "bugprio"};
    app.require_subcommand(1);
    const TrainLog log{&out, &err};

    // synth-corpus
    auto* synth = app.add_subcommand("synth-corpus", "write a synthetic keyword-labelled corpus");
    std::string synth_out;
    SyntheticCorpusOptions synth_opts;
    synth->add_option("--out", synth_out, "output JSONL path")->required();
    synth->add_option("--size", synth_opts.size, "labelled report count");
    synth->add_option("--seed", synth_opts.seed, "generator seed");
    synth->add_option("--unlabeled", synth_opts.unlabeled, "extra reports without a priority");

    // split
    auto* split = app.add_subcommand("split", "80/10/10 split of a corpus into train/valid/test JSONL files");
    std::string split_corpus, split_dir;
    std::uint64_t split_seed = 1;
    split->add_option("--corpus", split_corpus, "input JSONL")->required();
    split->add_option("--out-dir", split_dir, "directory for train.jsonl, valid.jsonl, test.jsonl")->required();
    split->add_option("--seed", split_seed, "master seed");

    // build-vocab
    auto* vocab_cmd = app.add_subcommand("build-vocab", "learn a byte-level BPE vocabulary");
    std::string vocab_corpus, vocab_out;
    std::optional<std::size_t> vocab_size;
    ConfigFlags vocab_cfg;
    vocab_cmd->add_option("--corpus", vocab_corpus, "training corpus JSONL")->required();
    vocab_cmd->add_option("--vocab-size", vocab_size, "target vocabulary size");
    vocab_cmd->add_option("--out", vocab_out, "vocabulary file")->required();
    add_config_flags(vocab_cmd, vocab_cfg);

    // pretrain-mlm
    auto* mlm_cmd = app.add_subcommand("pretrain-mlm", "masked-language-model pre-training from random init");
    std::string mlm_corpus, mlm_vocab, mlm_out;
    ConfigFlags mlm_cfg;
    mlm_cmd->add_option("--corpus", mlm_corpus, "pre-training corpus JSONL")->required();
    mlm_cmd->add_option("--vocab", mlm_vocab, "vocabulary file")->required();
    mlm_cmd->add_option("--out", mlm_out, "output checkpoint")->required();
    add_config_flags(mlm_cmd, mlm_cfg);

    // pretrain-cl
    auto* cl_cmd = app.add_subcommand("pretrain-cl", "contrastive pre-training from an MLM checkpoint");
    std::string cl_corpus, cl_vocab, cl_init, cl_out;
    std::optional<std::string> cl_method;
    std::optional<double> cl_tau;
    bool allow_any_init = false;
    ConfigFlags cl_cfg;
    cl_cmd->add_option("--corpus", cl_corpus, "pre-training corpus JSONL")->required();
    cl_cmd->add_option("--vocab", cl_vocab, "vocabulary file")->required();
    cl_cmd->add_option("--init", cl_init, "initial checkpoint (mlm-tagged)")->required();
    cl_cmd->add_option("--out", cl_out, "output checkpoint")->required();
    cl_cmd->add_option("--method", cl_method, "augmentation: swap | delete | mask");
    cl_cmd->add_option("--tau", cl_tau, "temperature");
    cl_cmd->add_flag("--allow-any-init", allow_any_init, "accept init- or cl-tagged checkpoints");
    add_config_flags(cl_cmd, cl_cfg);

    // finetune
    auto* ft_cmd = app.add_subcommand("finetune", "train the priority classifier");
    std::string ft_train, ft_valid, ft_vocab, ft_init, ft_out;
    std::optional<double> ft_lr;
    ConfigFlags ft_cfg;
    ft_cmd->add_option("--train", ft_train, "training JSONL")->required();
    ft_cmd->add_option("--valid", ft_valid, "validation JSONL")->required();
    ft_cmd->add_option("--vocab", ft_vocab, "vocabulary file")->required();
    ft_cmd->add_option("--init", ft_init, "pre-trained checkpoint")->required();
    ft_cmd->add_option("--out", ft_out, "output checkpoint")->required();
    ft_cmd->add_option("--lr", ft_lr, "peak learning rate");
    add_config_flags(ft_cmd, ft_cfg);

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score a fine-tuned checkpoint on a labelled set");
    std::string eval_test, eval_model, eval_vocab, eval_report;
    std::optional<std::size_t> eval_max_len;
    eval_cmd->add_option("--test", eval_test, "test JSONL")->required();
    eval_cmd->add_option("--model", eval_model, "checkpoint")->required();
    eval_cmd->add_option("--vocab", eval_vocab, "vocabulary file")->required();
    eval_cmd->add_option("--report", eval_report, "write the JSON report here");
    eval_cmd->add_option("--max-len", eval_max_len, "sequence length");

    // predict
    auto* pred_cmd = app.add_subcommand("predict", "read one JSON report on stdin, print its priority distribution");
    std::string pred_model, pred_vocab;
    std::optional<std::size_t> pred_max_len;
    pred_cmd->add_option("--model", pred_model, "checkpoint")->required();
    pred_cmd->add_option("--vocab", pred_vocab, "vocabulary file")->required();
    pred_cmd->add_option("--max-len", pred_max_len, "sequence length");

    // ablate
    auto* abl_cmd = app.add_subcommand("ablate", "run an ablation grid and print the comparison table");
    std::string abl_grid, abl_corpus, abl_out;
    std::vector<std::uint64_t> abl_seeds = {1, 2, 3};
    ConfigFlags abl_cfg;
    abl_cmd->add_option("--grid", abl_grid, "augment | lr | cl-onoff")->required();
    abl_cmd->add_option("--corpus", abl_corpus, "full corpus JSONL (split per seed)")->required();
    abl_cmd->add_option("--seeds", abl_seeds, "seed list")->delimiter(',');
    abl_cmd->add_option("--out", abl_out, "write the JSON comparison here");
    add_config_flags(abl_cmd, abl_cfg);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n";
        const auto parsed = app.get_subcommands();
        err << (parsed.empty() ? app.help() : parsed.front()->help());
        return kExitUsage;
    }

    try {
        if (*synth) {
            const auto reports = synthesize_corpus(synth_opts);
            write_corpus(synth_out, reports);
            log.event({{"stage", "synth-corpus"}, {"reports", reports.size()}, {"out", synth_out}});
        } else if (*split) {
            const DatasetSplit s = split_dataset(load_corpus(split_corpus), mix_seed(split_seed, 1));
            const std::filesystem::path dir(split_dir);
            std::filesystem::create_directories(dir);
            write_corpus(dir / "train.jsonl", s.train);
            write_corpus(dir / "valid.jsonl", s.valid);
            write_corpus(dir / "test.jsonl", s.test);
            log.event({{"stage", "split"},
                       {"train", s.train.size()},
                       {"valid", s.valid.size()},
                       {"test", s.test.size()}});
        } else if (*vocab_cmd) {
            RunConfig cfg = resolve_config(vocab_cfg);
            if (vocab_size) {
                cfg.vocab_size = *vocab_size;
            }
            cfg.validate();
            const Vocabulary v = build_vocab(load_corpus(vocab_corpus), cfg.vocab_size);
            v.save(vocab_out);
            log.event({{"stage", "vocab"}, {"size", v.size()}, {"merges", v.merges().size()}, {"hash", v.hash()}});
        } else if (*mlm_cmd) {
            RunConfig cfg = resolve_config(mlm_cfg);
            cfg.validate();
            const Vocabulary v = Vocabulary::load(mlm_vocab);
            Model<float> model = init_model(cfg, v);
            run_mlm(model, load_corpus(mlm_corpus), v, cfg, log);
            const MlmRunParams p = cfg.mlm_params();
            save_checkpoint(mlm_out, model, Stage::mlm, v.hash(),
                            manifest(cfg, {{"batch", p.batch},
                                           {"max_len", cfg.encoder.max_len},
                                           {"steps", p.steps},
                                           {"lr", p.lr},
                                           {"warmup", p.warmup},
                                           {"variants", p.variants},
                                           {"mask_rate", p.mask_rate}}));
        } else if (*cl_cmd) {
            RunConfig cfg = resolve_config(cl_cfg);
            if (cl_method) {
                cfg.augment = parse_augment_method(*cl_method);
            }
            if (cl_tau) {
                cfg.tau = *cl_tau;
            }
            const Vocabulary v = Vocabulary::load(cl_vocab);
            Checkpoint ck = load_checkpoint(cl_init, v.hash());
            if (ck.stage == Stage::finetuned) {
                throw std::invalid_argument("pretrain-cl: refusing a finetuned checkpoint");
            }
            if (ck.stage != Stage::mlm && !allow_any_init) {
                throw std::invalid_argument("pretrain-cl: --init must be an mlm checkpoint (got " +
                                            std::string(to_string(ck.stage)) + "); pass --allow-any-init to override");
            }
            cfg = with_checkpoint_encoder(cfg, ck, log);
            const auto reports = load_corpus(cl_corpus);
            const ClHistory h = run_cl(ck.model, reports, v, cfg, log);
            const ClRunParams p = cfg.cl_params(reports.size());
            nlohmann::ordered_json params = {{"batch", p.batch},  {"lr", p.lr},
                                             {"steps", p.steps},  {"epochs", cfg.cl_epochs},
                                             {"tau", p.tau},      {"method", std::string(to_string(p.method))},
                                             {"skipped", h.skipped}};
            save_checkpoint(cl_out, ck.model, Stage::cl, v.hash(), manifest(cfg, params));
        } else if (*ft_cmd) {
            RunConfig cfg = resolve_config(ft_cfg);
            if (ft_lr) {
                cfg.ft_lr = *ft_lr;
            }
            const Vocabulary v = Vocabulary::load(ft_vocab);
            Checkpoint ck = load_checkpoint(ft_init, v.hash());
            if (ck.stage == Stage::finetuned) {
                throw std::invalid_argument("finetune: --init is already finetuned; start from a pre-trained one");
            }
            cfg = with_checkpoint_encoder(cfg, ck, log);
            const FinetuneParams p = cfg.ft_params();
            const FinetuneHistory h = finetune(ck.model, filter_labeled(load_corpus(ft_train)),
                                               filter_labeled(load_corpus(ft_valid)), v, p, log);
            save_checkpoint(ft_out, ck.model, Stage::finetuned, v.hash(),
                            manifest(cfg, {{"batch", p.batch},
                                           {"lr", p.lr},
                                           {"epochs", p.epochs},
                                           {"warmup", p.warmup},
                                           {"max_len", p.max_len},
                                           {"best_epoch", h.best_epoch},
                                           {"best_valid_weighted_f1", h.best_valid_f1}}));
        } else if (*eval_cmd) {
            const Vocabulary v = Vocabulary::load(eval_vocab);
            Checkpoint ck = load_checkpoint(eval_model, v.hash());
            if (ck.stage != Stage::finetuned) {
                log.warn("evaluate: checkpoint is tagged " + std::string(to_string(ck.stage)) + ", not finetuned");
            }
            const std::size_t max_len = eval_max_len.value_or(default_max_len(ck));
            const EvalReport report = evaluate(ck.model, v, load_corpus(eval_test), max_len, log);
            if (!eval_report.empty()) {
                write_text(eval_report, to_json(report).dump(2) + "\n");
            }
            err << render_report(report);
            log.event({{"stage", "evaluate"},
                       {"total", report.total},
                       {"accuracy", report.accuracy},
                       {"weighted_f1", report.weighted.f1}});
        } else if (*pred_cmd) {
            const Vocabulary v = Vocabulary::load(pred_vocab);
            Checkpoint ck = load_checkpoint(pred_model, v.hash());
            std::string line = read_stream(in);
            while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
                line.pop_back();
            }
            const BugReport report = parse_report_line(line);
            const std::size_t max_len = pred_max_len.value_or(default_max_len(ck));
            out << predict(ck.model, v, report, max_len).to_json().dump() << '\n';
        } else if (*abl_cmd) {
            RunConfig cfg = resolve_config(abl_cfg);
            const AblationResult r = ablate(parse_ablation_grid(abl_grid), load_corpus(abl_corpus), cfg, abl_seeds, log);
            if (!abl_out.empty()) {
                write_text(abl_out, r.to_json().dump(2) + "\n");
            }
            err << r.render();
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    }
    return kExitOk;
}

}  // namespace bugprio
