// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over dense rank-2 tensors.
//
// A Graph is a tape: nodes are appended in evaluation order, so the tape
// order is already topological and backward() walks it once in reverse.
// Parameters live outside the graph; a graph binds them as leaves and
// accumulates their gradients directly into Parameter::grad.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "bugprio/rng.hpp"
#include "bugprio/tensor.hpp"

namespace bugprio::ad {

inline constexpr std::int64_t kIgnoreIndex = -100;

template <typename T>
struct Parameter {
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
class Graph;

/// Handle to a node of a Graph.
template <typename T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return graph->value(*this); }
    const Shape& shape() const { return value().shape(); }
};

enum class GradMode { enabled, disabled };

template <typename T>
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    explicit Graph(GradMode mode = GradMode::enabled) : mode_(mode) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> constant(Tensor<T> value);

    /// Binds a parameter as a leaf. Binding the same parameter twice returns the same node.
    Var<T> param(Parameter<T>& p);

    const Tensor<T>& value(Var<T> v) const { return value(v.id); }
    const Tensor<T>& value(std::size_t id) const;
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    bool grad_enabled() const noexcept { return mode_ == GradMode::enabled; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Appends a node. The backward rule is dropped when no input needs a gradient.
    Var<T> emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
    Var<T> emit(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward);

    /// Gradient buffer of a node, zero-initialized on first use. For a
    /// parameter leaf this is the parameter's own gradient.
    Tensor<T>& grad(std::size_t id);
    const Tensor<T>& grad(Var<T> v) { return grad(v.id); }

    /// Runs reverse accumulation from a scalar loss. A graph supports one backward pass.
    void backward(Var<T> loss);

private:
    struct Node {
        Tensor<T> value;
        Parameter<T>* param = nullptr;
        BackwardFn backward;
        bool requires_grad = false;
        bool has_grad = false;
        Tensor<T> grad;
    };

    GradMode mode_;
    bool backward_done_ = false;
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter<T>*, std::size_t> param_ids_;
};

// Primitives. Each returns a new node and registers its backward rule.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a * b^T
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
/// Adds a 1 x n row to every row of a.
template <typename T> Var<T> add_row(Var<T> a, Var<T> row);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> sum(Var<T> a);

/// Row-wise softmax. Columns with key_mask[c] == 0 get probability 0
/// (equivalent to a -inf logit). An empty mask attends everywhere.
template <typename T> Var<T> softmax_rows(Var<T> a, std::span<const std::uint8_t> key_mask = {});

template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T epsilon = T(1e-5));

template <typename T> Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);

/// Mean over the rows with row_mask[r] != 0; result is 1 x cols.
template <typename T> Var<T> masked_mean_rows(Var<T> x, std::span<const std::uint8_t> row_mask);

template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t width);
template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows);

/// Mean softmax cross-entropy over rows whose target is not kIgnoreIndex.
template <typename T> Var<T> cross_entropy(Var<T> logits, std::span<const std::int64_t> targets);

/// Inverted dropout; identity when rate is 0.
template <typename T> Var<T> dropout(Var<T> x, double rate, Rng& rng);

/// Scales every row to unit L2 norm. A zero row is an error.
template <typename T> Var<T> l2_normalize_rows(Var<T> x);

// Gradient checking (float64 only).

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// derivative is ~0 from dividing finite-difference round-off by ~0.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Central-difference check of f at `point`; returns the worst relative error
/// over all coordinates.
double grad_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f, const Tensor<double>& point,
                  double step = 1e-5);

/// Central-difference check of a loss over several parameters. Probes at most
/// `max_coords` coordinates per parameter (all of them when 0); the probed
/// coordinates are drawn from `rng`.
double grad_check_params(const std::function<Var<double>(Graph<double>&)>& loss,
                         std::span<Parameter<double>* const> params, double step, std::size_t max_coords, Rng& rng);

}  // namespace bugprio::ad
