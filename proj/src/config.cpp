// SPDX-License-Identifier: Apache-2.0
#include "bugprio/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace bugprio {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
    N v{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError("config: key \"" + std::string(key) + "\" has invalid value \"" + std::string(text) + "\"");
    }
    return v;
}

struct Field {
    std::string name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<nlohmann::ordered_json(const RunConfig&)> get;
};

template <typename N>
Field number(std::string name, N RunConfig::*member) {
    return {name, [name, member](RunConfig& c, std::string_view v) { c.*member = parse_number<N>(name, v); },
            [member](const RunConfig& c) { return nlohmann::ordered_json(c.*member); }};
}

template <typename N>
Field encoder_number(std::string name, N EncoderConfig::*member) {
    return {name, [name, member](RunConfig& c, std::string_view v) { c.encoder.*member = parse_number<N>(name, v); },
            [member](const RunConfig& c) { return nlohmann::ordered_json(c.encoder.*member); }};
}

template <typename N>
Field adam_number(std::string name, N AdamWOptions::*member) {
    return {name, [name, member](RunConfig& c, std::string_view v) { c.adam.*member = parse_number<N>(name, v); },
            [member](const RunConfig& c) { return nlohmann::ordered_json(c.adam.*member); }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> all = [] {
        std::vector<Field> f;
        f.push_back({"scale", [](RunConfig& c, std::string_view v) { c = RunConfig::preset(v); },
                     [](const RunConfig& c) { return nlohmann::ordered_json(c.scale); }});
        f.push_back(number("seed", &RunConfig::seed));
        f.push_back(number("vocab_size", &RunConfig::vocab_size));
        f.push_back(encoder_number("layers", &EncoderConfig::layers));
        f.push_back(encoder_number("heads", &EncoderConfig::heads));
        f.push_back(encoder_number("d_model", &EncoderConfig::d_model));
        f.push_back(encoder_number("d_ff", &EncoderConfig::d_ff));
        f.push_back(encoder_number("max_len", &EncoderConfig::max_len));
        f.push_back(encoder_number("dropout", &EncoderConfig::dropout));
        f.push_back(encoder_number("attention_dropout", &EncoderConfig::attention_dropout));
        f.push_back(encoder_number("layer_norm_epsilon", &EncoderConfig::layer_norm_epsilon));
        f.push_back(number("mlm_batch", &RunConfig::mlm_batch));
        f.push_back(number("mlm_steps", &RunConfig::mlm_steps));
        f.push_back(number("mlm_lr", &RunConfig::mlm_lr));
        f.push_back(number("mlm_warmup", &RunConfig::mlm_warmup));
        f.push_back(number("mlm_variants", &RunConfig::mlm_variants));
        f.push_back(number("mask_rate", &RunConfig::mask_rate));
        f.push_back(number("cl_batch", &RunConfig::cl_batch));
        f.push_back(number("cl_steps", &RunConfig::cl_steps));
        f.push_back(number("cl_epochs", &RunConfig::cl_epochs));
        f.push_back(number("cl_lr", &RunConfig::cl_lr));
        f.push_back(number("cl_warmup", &RunConfig::cl_warmup));
        f.push_back(number("tau", &RunConfig::tau));
        f.push_back({"augment",
                     [](RunConfig& c, std::string_view v) {
                         try {
                             c.augment = parse_augment_method(v);
                         } catch (const std::invalid_argument& e) {
                             throw ConfigError(std::string("config: ") + e.what());
                         }
                     },
                     [](const RunConfig& c) { return nlohmann::ordered_json(std::string(to_string(c.augment))); }});
        f.push_back(number("ft_batch", &RunConfig::ft_batch));
        f.push_back(number("ft_epochs", &RunConfig::ft_epochs));
        f.push_back(number("ft_lr", &RunConfig::ft_lr));
        f.push_back(number("ft_warmup", &RunConfig::ft_warmup));
        f.push_back(number("ft_max_len", &RunConfig::ft_max_len));
        f.push_back(adam_number("weight_decay", &AdamWOptions::weight_decay));
        f.push_back(adam_number("adam_beta1", &AdamWOptions::beta1));
        f.push_back(adam_number("adam_beta2", &AdamWOptions::beta2));
        f.push_back(adam_number("adam_epsilon", &AdamWOptions::epsilon));
        return f;
    }();
    return all;
}

}  // namespace

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::paper() {
    RunConfig c;
    c.scale = "paper";
    c.vocab_size = 50265;
    c.encoder = EncoderConfig::paper_scale(c.vocab_size);
    c.mlm_batch = 16;
    c.mlm_steps = 275000;
    c.mlm_lr = 5e-5;
    c.mlm_warmup = 1000;
    c.mlm_variants = 10;
    c.cl_batch = 32;
    c.cl_epochs = 5;
    c.cl_lr = 3e-5;
    c.cl_warmup = 1000;
    c.ft_batch = 64;
    c.ft_epochs = 10;
    c.ft_lr = 5e-6;
    c.ft_warmup = 1000;
    c.ft_max_len = 256;
    return c;
}

RunConfig RunConfig::preset(std::string_view scale) {
    if (scale == "desk") {
        return desk();
    }
    if (scale == "paper") {
        return paper();
    }
    throw ConfigError("config: unknown scale \"" + std::string(scale) + "\" (desk|paper)");
}

void RunConfig::set(std::string_view key, std::string_view value) {
    for (const Field& f : fields()) {
        if (f.name == key) {
            f.set(*this, trim(value));
            return;
        }
    }
    throw ConfigError("config: unknown key \"" + std::string(key) + "\"");
}

void RunConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
    EncoderConfig e = encoder;
    e.vocab_size = vocab_size;
    try {
        e.validate();
    } catch (const std::invalid_argument& ex) {
        fail(ex.what());
    }
    if (mlm_batch == 0 || cl_batch == 0 || ft_batch == 0) {
        fail("batch sizes must be positive");
    }
    if (mlm_steps == 0) {
        fail("mlm_steps must be positive");
    }
    if (cl_steps == 0 && cl_epochs == 0) {
        fail("one of cl_steps, cl_epochs must be positive");
    }
    if (ft_epochs == 0) {
        fail("ft_epochs must be positive");
    }
    if (mlm_variants == 0) {
        fail("mlm_variants must be at least 1");
    }
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
        fail("mask_rate must lie in (0, 1)");
    }
    if (!(tau > 0.0)) {
        fail("tau must be positive");
    }
    if (mlm_lr < 0.0 || cl_lr < 0.0 || ft_lr < 0.0) {
        fail("learning rates must be non-negative");
    }
    if (ft_max_len < 3 || ft_max_len > encoder.max_len) {
        fail("ft_max_len must lie in [3, max_len]");
    }
    if (adam.beta1 < 0.0 || adam.beta1 >= 1.0 || adam.beta2 < 0.0 || adam.beta2 >= 1.0) {
        fail("adam betas must lie in [0, 1)");
    }
    if (!(adam.epsilon > 0.0) || adam.weight_decay < 0.0) {
        fail("adam_epsilon must be positive and weight_decay non-negative");
    }
}

MlmRunParams RunConfig::mlm_params() const {
    MlmRunParams p;
    p.batch = mlm_batch;
    p.steps = mlm_steps;
    p.lr = mlm_lr;
    p.warmup = mlm_warmup;
    p.variants = mlm_variants;
    p.mask_rate = mask_rate;
    p.adam = adam;
    p.seed = mix_seed(seed, 3);
    return p;
}

ClRunParams RunConfig::cl_params(std::size_t corpus_size) const {
    ClRunParams p;
    p.batch = cl_batch;
    p.steps = cl_epochs > 0 ? cl_epochs * std::max<std::size_t>(1, (corpus_size + cl_batch - 1) / cl_batch) : cl_steps;
    p.lr = cl_lr;
    p.warmup = cl_warmup;
    p.tau = tau;
    p.method = augment;
    p.max_len = encoder.max_len;
    p.adam = adam;
    p.seed = mix_seed(seed, 4);
    return p;
}

FinetuneParams RunConfig::ft_params() const {
    FinetuneParams p;
    p.batch = ft_batch;
    p.epochs = ft_epochs;
    p.lr = ft_lr;
    p.warmup = ft_warmup;
    p.max_len = ft_max_len;
    p.adam = adam;
    p.seed = mix_seed(seed, 5);
    return p;
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    for (const Field& f : fields()) {
        j[f.name] = f.get(*this);
    }
    return j;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const Field& f : fields()) {
        const nlohmann::ordered_json v = f.get(*this);
        out += f.name + " = " + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
    }
    return out;
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const Field& f : fields()) {
            k.push_back(f.name);
        }
        return k;
    }();
    return keys;
}

RunConfig parse_config(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view l = trim(line);
        if (l.empty() || l.front() == '#') {
            continue;
        }
        const auto eq = l.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        entries.emplace_back(std::string(trim(l.substr(0, eq))), std::string(trim(l.substr(eq + 1))));
    }
    RunConfig c;
    for (const auto& [k, v] : entries) {
        if (k == "scale") {
            c.set(k, v);
        }
    }
    for (const auto& [k, v] : entries) {
        if (k != "scale") {
            c.set(k, v);
        }
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
    return {{"layers", c.layers},
            {"heads", c.heads},
            {"d_model", c.d_model},
            {"d_ff", c.d_ff},
            {"max_len", c.max_len},
            {"vocab_size", c.vocab_size},
            {"dropout", c.dropout},
            {"attention_dropout", c.attention_dropout},
            {"layer_norm_epsilon", c.layer_norm_epsilon}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.attention_dropout = j.at("attention_dropout").get<double>();
    c.layer_norm_epsilon = j.at("layer_norm_epsilon").get<double>();
    return c;
}

}  // namespace bugprio
