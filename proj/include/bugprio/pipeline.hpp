// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bugprio/classifier.hpp"
#include "bugprio/config.hpp"
#include "bugprio/contrastive.hpp"
#include "bugprio/corpus.hpp"
#include "bugprio/metrics.hpp"
#include "bugprio/mlm.hpp"
#include "bugprio/model.hpp"
#include "bugprio/tokenizer.hpp"

namespace bugprio {

/// Byte-level BPE over the composed texts of `reports`.
Vocabulary build_vocab(const std::vector<BugReport>& reports, std::size_t target_size);

/// Fresh model sized to `vocab`, seeded from the config's master seed.
Model<float> init_model(const RunConfig& config, const Vocabulary& vocab);

StageHistory run_mlm(Model<float>& model, const std::vector<BugReport>& reports, const Vocabulary& vocab,
                     const RunConfig& config, const TrainLog& log = {});

ClHistory run_cl(Model<float>& model, const std::vector<BugReport>& reports, const Vocabulary& vocab,
                 const RunConfig& config, const TrainLog& log = {});

struct StageTimes {
    double vocab = 0.0;
    double mlm = 0.0;
    double cl = 0.0;
    double finetune = 0.0;
    double evaluate = 0.0;

    double total() const { return vocab + mlm + cl + finetune + evaluate; }
};

struct PipelineResult {
    DatasetSplit split;
    Vocabulary vocab;
    Model<float> model;
    StageHistory mlm;
    std::optional<ClHistory> cl;
    FinetuneHistory finetune;
    EvalReport train_report;
    EvalReport test_report;
    StageTimes seconds;
};

/// split -> vocabulary (train split) -> MLM -> optional CL -> fine-tune ->
/// evaluate on the train and test splits. Pre-training uses every train-split
/// report; fine-tuning uses its labeled subset.
PipelineResult run_pipeline(const std::vector<BugReport>& corpus, const RunConfig& config, bool with_cl,
                            const TrainLog& log = {});

enum class AblationGrid { augment, lr, cl_onoff };

std::string_view to_string(AblationGrid grid);
/// "augment" | "lr" | "cl-onoff"
AblationGrid parse_ablation_grid(std::string_view text);

/// Fine-tuning learning rates swept by the lr grid.
inline constexpr std::array<double, 5> kLearningRateGrid = {1e-6, 2.5e-6, 5e-6, 7.5e-6, 1e-5};

struct AblationRun {
    std::uint64_t seed = 0;
    EvalReport train_report;
    EvalReport test_report;
    /// Wall time of every stage that produced this cell's model, shared stages included.
    double seconds = 0.0;
};

struct AblationCell {
    std::string label;
    std::vector<AblationRun> runs;

    double median_weighted_f1() const;
    double median_accuracy() const;
};

struct AblationResult {
    AblationGrid grid = AblationGrid::cl_onoff;
    std::vector<AblationCell> cells;
    std::vector<std::string> warnings;

    nlohmann::ordered_json to_json() const;
    /// Rows: cell, median weighted F1, median accuracy, per-seed values.
    std::string render() const;
};

/// Runs every grid cell for every seed. Stages that do not depend on the grid
/// variable are trained once per seed and shared by the cells. Metrics are
/// measured on the test split.
AblationResult ablate(AblationGrid grid, const std::vector<BugReport>& corpus, const RunConfig& base,
                      const std::vector<std::uint64_t>& seeds, const TrainLog& log = {});

}  // namespace bugprio
