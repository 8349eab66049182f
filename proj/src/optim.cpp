// SPDX-License-Identifier: Apache-2.0
#include "bugprio/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bugprio {

template <typename T>
AdamWState<T> AdamWState<T>::for_params(std::span<ad::Parameter<T>* const> params) {
    AdamWState state;
    for (const ad::Parameter<T>* p : params) {
        state.first_moment.emplace_back(p->value.shape());
        state.second_moment.emplace_back(p->value.shape());
    }
    return state;
}

template <typename T>
void adamw_step(std::span<ad::Parameter<T>* const> params, AdamWState<T>& state, double lr, const AdamWOptions& options) {
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
        throw ShapeError("adamw_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " tensors for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.first_moment[i].shape() != params[i]->value.shape() ||
            state.second_moment[i].shape() != params[i]->value.shape()) {
            throw ShapeError("adamw_step", state.first_moment[i].shape(), params[i]->value.shape());
        }
        if (params[i]->grad.shape() != params[i]->value.shape()) {
            throw ShapeError("adamw_step grad", params[i]->grad.shape(), params[i]->value.shape());
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
    const T decay = static_cast<T>(1.0 - lr * options.weight_decay);
    const T b1 = static_cast<T>(options.beta1), b2 = static_cast<T>(options.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(options.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = params[i]->value;
        const Tensor<T>& g = params[i]->grad;
        Tensor<T>& m = state.first_moment[i];
        Tensor<T>& v = state.second_moment[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            p[k] *= decay;
            m[k] = b1 * m[k] + (T{1} - b1) * g[k];
            v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
            p[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
        }
    }
}

double lr_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps, double peak_lr) {
    if (warmup_steps < 0 || warmup_steps > total_steps) {
        throw std::invalid_argument("lr_schedule: warmup " + std::to_string(warmup_steps) + " exceeds total " +
                                    std::to_string(total_steps));
    }
    if (step < 0 || step > total_steps) {
        throw std::out_of_range("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total_steps) + "]");
    }
    if (step < warmup_steps) {
        return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (total_steps == warmup_steps) {
        return peak_lr;
    }
    return peak_lr * static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup_steps);
}

template struct AdamWState<float>;
template struct AdamWState<double>;
template void adamw_step(std::span<ad::Parameter<float>* const>, AdamWState<float>&, double, const AdamWOptions&);
template void adamw_step(std::span<ad::Parameter<double>* const>, AdamWState<double>&, double, const AdamWOptions&);

}  // namespace bugprio
