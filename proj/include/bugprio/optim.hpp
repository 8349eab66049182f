// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bugprio/autodiff.hpp"

namespace bugprio {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    bool operator==(const AdamWOptions&) const = default;
};

/// First and second moment buffers, one pair per parameter, plus the step count.
template <typename T>
struct AdamWState {
    std::vector<Tensor<T>> first_moment;
    std::vector<Tensor<T>> second_moment;
    std::int64_t step = 0;

    static AdamWState for_params(std::span<ad::Parameter<T>* const> params);
};

/// One decoupled-weight-decay Adam update over `params` using their current grads.
///   p <- p - lr * wd * p
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
template <typename T>
void adamw_step(std::span<ad::Parameter<T>* const> params, AdamWState<T>& state, double lr, const AdamWOptions& options);

/// Linear warmup from 0 to peak over `warmup_steps`, then linear decay to 0 at `total_steps`.
double lr_schedule(std::int64_t step, std::int64_t warmup_steps, std::int64_t total_steps, double peak_lr);

}  // namespace bugprio
