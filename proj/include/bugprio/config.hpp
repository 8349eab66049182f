// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bugprio/classifier.hpp"
#include "bugprio/contrastive.hpp"
#include "bugprio/encoder.hpp"
#include "bugprio/mlm.hpp"

namespace bugprio {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Every knob of a pipeline run. Loaded from a flat key=value file; command
/// line values override file values.
struct RunConfig {
    std::string scale = "desk";
    std::uint64_t seed = 1;
    std::size_t vocab_size = 8192;
    EncoderConfig encoder;

    std::size_t mlm_batch = 16;
    std::size_t mlm_steps = 500;
    double mlm_lr = 1e-3;
    std::size_t mlm_warmup = 50;
    std::size_t mlm_variants = 10;
    double mask_rate = 0.15;

    std::size_t cl_batch = 16;
    std::size_t cl_steps = 200;
    /// When positive, overrides cl_steps with cl_epochs passes over the corpus.
    std::size_t cl_epochs = 0;
    double cl_lr = 1e-4;
    std::size_t cl_warmup = 20;
    double tau = 0.05;
    AugmentMethod augment = AugmentMethod::swap_two_words;

    std::size_t ft_batch = 16;
    std::size_t ft_epochs = 30;
    double ft_lr = 1e-3;
    std::size_t ft_warmup = 20;
    std::size_t ft_max_len = 64;

    AdamWOptions adam;

    static RunConfig desk();
    /// Reference-scale hyperparameters (12 layers, 768 wide, 275K MLM steps).
    static RunConfig paper();
    static RunConfig preset(std::string_view scale);

    /// Assigns one key from its text form. Throws ConfigError on an unknown
    /// key or an unparsable value. "scale" resets every field to that preset.
    void set(std::string_view key, std::string_view value);

    /// Throws ConfigError naming the first violated constraint.
    void validate() const;

    MlmRunParams mlm_params() const;
    /// cl_epochs (if set) is converted to steps against `corpus_size`.
    ClRunParams cl_params(std::size_t corpus_size) const;
    FinetuneParams ft_params() const;

    nlohmann::ordered_json to_json() const;
    /// Text form accepted by load_config; one key per line in to_json order.
    std::string to_text() const;

    bool operator==(const RunConfig&) const = default;
};

/// Keys accepted by RunConfig::set, in canonical order.
const std::vector<std::string>& config_keys();

/// "key = value" lines; blank lines and '#' comments are ignored. A "scale"
/// line, wherever it appears, is applied before the other keys.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& config);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

}  // namespace bugprio
