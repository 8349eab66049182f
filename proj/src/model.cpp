// SPDX-License-Identifier: Apache-2.0
#include "bugprio/model.hpp"

#include <array>
#include <stdexcept>

namespace bugprio {

namespace {
constexpr std::array<std::string_view, 4> kStageNames = {"init", "mlm", "cl", "finetuned"};
}

std::string_view to_string(Stage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

Stage parse_stage(std::string_view text) {
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        if (kStageNames[i] == text) {
            return static_cast<Stage>(i);
        }
    }
    throw std::invalid_argument("unknown stage tag \"" + std::string(text) + "\"");
}

template <typename T>
Model<T> Model<T>::init(const EncoderConfig& config, Rng& rng) {
    Model m;
    m.encoder = EncoderParams<T>::init(config, rng);
    m.mlm_bias = ad::Parameter<T>(Tensor<T>({config.vocab_size}));
    Tensor<T> w = Tensor<T>::matrix(kNumPriorities, config.d_model);
    for (T& v : w.values()) {
        v = static_cast<T>(0.02 * rng.normal());
    }
    m.classifier = ad::Parameter<T>(std::move(w));
    return m;
}

template <typename T>
std::vector<std::pair<std::string, ad::Parameter<T>*>> Model<T>::named_parameters() {
    auto out = encoder.named_parameters();
    out.emplace_back("mlm.bias", &mlm_bias);
    out.emplace_back("classifier.weight", &classifier);
    return out;
}

template <typename T>
std::vector<ad::Parameter<T>*> Model<T>::parameters() {
    std::vector<ad::Parameter<T>*> out;
    for (auto& [name, p] : named_parameters()) {
        out.push_back(p);
    }
    return out;
}

template <typename T>
void Model<T>::zero_grad() {
    for (ad::Parameter<T>* p : parameters()) {
        p->zero_grad();
    }
}

template <typename To, typename From>
Model<To> convert_model(const Model<From>& model) {
    Model<To> out;
    out.encoder = convert_params<To>(model.encoder);
    out.mlm_bias = ad::Parameter<To>(tensor_cast<To>(model.mlm_bias.value));
    out.classifier = ad::Parameter<To>(tensor_cast<To>(model.classifier.value));
    return out;
}

template struct Model<float>;
template struct Model<double>;
template Model<double> convert_model(const Model<float>&);
template Model<float> convert_model(const Model<double>&);
template Model<float> convert_model(const Model<float>&);

}  // namespace bugprio
