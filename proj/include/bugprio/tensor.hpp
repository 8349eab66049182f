// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bugprio {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Raised by any tensor operation whose operands disagree in shape.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string& op, const Shape& lhs, const Shape& rhs);
    explicit ShapeError(const std::string& message) : std::invalid_argument(message) {}
};

/// Dense row-major tensor. Operations in this library treat rank-1 tensors
/// as a single row and use rank-2 everywhere else.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != element_count(shape_)) {
            throw ShapeError("tensor of shape " + shape_string(shape_) + " cannot hold " + std::to_string(data_.size()) +
                             " values");
        }
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{0}) { return Tensor({rows, cols}, fill); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
    std::size_t rows() const noexcept {
        const std::size_t c = cols();
        return c == 0 ? 0 : data_.size() / c;
    }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols(), cols()}; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool operator==(const Tensor&) const = default;

    static std::size_t element_count(const Shape& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) {
            n *= d;
        }
        return n;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

/// Converts element type, e.g. a float32 training tensor to float64 for checking.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
    std::vector<To> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        out[i] = static_cast<To>(t[i]);
    }
    return Tensor<To>(t.shape(), std::move(out));
}

}  // namespace bugprio
