// SPDX-License-Identifier: Apache-2.0
#include "bugprio/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace bugprio {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& lhs, const Shape& rhs)
    : std::invalid_argument(op + ": shape mismatch " + shape_string(lhs) + " vs " + shape_string(rhs)) {}

}  // namespace bugprio

namespace bugprio::ad {

// ---------------------------------------------------------------- Graph

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) {
        return {this, it->second};
    }
    Node node;
    node.param = &p;
    node.requires_grad = grad_enabled();
    nodes_.push_back(std::move(node));
    param_ids_.emplace(&p, nodes_.size() - 1);
    return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
}

template <typename T>
Var<T> Graph<T>::emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return emit(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
}

template <typename T>
Var<T> Graph<T>::emit(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    if (grad_enabled()) {
        for (const Var<T>& in : inputs) {
            if (nodes_[in.id].requires_grad) {
                node.requires_grad = true;
                break;
            }
        }
    }
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.param) {
        n.has_grad = true;
        return n.param->grad;
    }
    if (!n.has_grad) {
        n.grad = Tensor<T>(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
    if (backward_done_) {
        throw std::logic_error("backward: graph already differentiated; build a new graph");
    }
    if (value(loss).size() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_string(value(loss).shape()));
    }
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) {
        return;
    }
    grad(loss.id)[0] += T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && n.has_grad) {
            n.backward(*this, i);
        }
    }
}

// ---------------------------------------------------------------- helpers

namespace {

template <typename T>
void require_rank2(const char* op, const Tensor<T>& t) {
    if (t.shape().size() > 2 || t.shape().empty()) {
        throw ShapeError(std::string(op) + ": expected a rank-1 or rank-2 tensor, got " + shape_string(t.shape()));
    }
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(op, a.shape(), b.shape());
    }
}

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += av * bp[j];
            }
        }
    }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T s0{0}, s1{0}, s2{0}, s3{0};
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                s0 += ai[p] * bj[p];
                s1 += ai[p + 1] * bj[p + 1];
                s2 += ai[p + 2] * bj[p + 2];
                s3 += ai[p + 3] * bj[p + 3];
            }
            for (; p < k; ++p) {
                s0 += ai[p] * bj[p];
            }
            ci[j] += (s0 + s1) + (s2 + s3);
        }
    }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            T* cp = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                cp[j] += av * bi[j];
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------- primitives

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Graph<T>& g = *a.graph;
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    require_rank2("matmul", av);
    require_rank2("matmul", bv);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (bv.rows() != k) {
        throw ShapeError("matmul", av.shape(), bv.shape());
    }
    Tensor<T> out = Tensor<T>::matrix(m, n);
    gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
    return g.emit(std::move(out), {a, b}, [a = a.id, b = b.id, m, k, n](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        if (g.requires_grad(a)) {
            gemm_nt(dy.data(), g.value(b).data(), g.grad(a).data(), m, n, k);
        }
        if (g.requires_grad(b)) {
            gemm_tn(g.value(a).data(), dy.data(), g.grad(b).data(), m, k, n);
        }
    });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    Graph<T>& g = *a.graph;
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    require_rank2("matmul_nt", av);
    require_rank2("matmul_nt", bv);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
    if (bv.cols() != k) {
        throw ShapeError("matmul_nt", av.shape(), bv.shape());
    }
    Tensor<T> out = Tensor<T>::matrix(m, n);
    gemm_nt(av.data(), bv.data(), out.data(), m, k, n);
    return g.emit(std::move(out), {a, b}, [a = a.id, b = b.id, m, k, n](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        if (g.requires_grad(a)) {
            gemm_nn(dy.data(), g.value(b).data(), g.grad(a).data(), m, n, k);
        }
        if (g.requires_grad(b)) {
            gemm_tn(dy.data(), g.value(a).data(), g.grad(b).data(), m, n, k);
        }
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    require_same("add", av, bv);
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return a.graph->emit(std::move(out), {a, b}, [a = a.id, b = b.id](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        for (std::size_t in : {a, b}) {
            if (g.requires_grad(in)) {
                Tensor<T>& dx = g.grad(in);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    dx[i] += dy[i];
                }
            }
        }
    });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& rv = row.value();
    require_rank2("add_row", av);
    if (rv.size() != av.cols()) {
        throw ShapeError("add_row", av.shape(), rv.shape());
    }
    Tensor<T> out = av;
    const std::size_t n = av.cols();
    for (std::size_t r = 0; r < av.rows(); ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            out[r * n + c] += rv[c];
        }
    }
    return a.graph->emit(std::move(out), {a, row}, [a = a.id, row = row.id, n](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        if (g.requires_grad(a)) {
            Tensor<T>& dx = g.grad(a);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                dx[i] += dy[i];
            }
        }
        if (g.requires_grad(row)) {
            Tensor<T>& dr = g.grad(row);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                dr[i % n] += dy[i];
            }
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    require_same("mul", av, bv);
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    return a.graph->emit(std::move(out), {a, b}, [a = a.id, b = b.id](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        if (g.requires_grad(a)) {
            Tensor<T>& dx = g.grad(a);
            const Tensor<T>& bv = g.value(b);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                dx[i] += dy[i] * bv[i];
            }
        }
        if (g.requires_grad(b)) {
            Tensor<T>& dx = g.grad(b);
            const Tensor<T>& av = g.value(a);
            for (std::size_t i = 0; i < dy.size(); ++i) {
                dx[i] += dy[i] * av[i];
            }
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (T& v : out.values()) {
        v *= factor;
    }
    return a.graph->emit(std::move(out), {a}, [a = a.id, factor](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        Tensor<T>& dx = g.grad(a);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dx[i] += dy[i] * factor;
        }
    });
}

template <typename T>
Var<T> relu(Var<T> a) {
    Tensor<T> out = a.value();
    for (T& v : out.values()) {
        v = v > T{0} ? v : T{0};
    }
    return a.graph->emit(std::move(out), {a}, [a = a.id](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        const Tensor<T>& y = g.value(self);
        Tensor<T>& dx = g.grad(a);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            if (y[i] > T{0}) {
                dx[i] += dy[i];
            }
        }
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    const Tensor<T>& av = a.value();
    T total{0};
    for (T v : av.values()) {
        total += v;
    }
    return a.graph->emit(Tensor<T>({1, 1}, total), {a}, [a = a.id](Graph<T>& g, std::size_t self) {
        const T d = g.grad(self)[0];
        for (T& v : g.grad(a).values()) {
            v += d;
        }
    });
}

template <typename T>
Var<T> softmax_rows(Var<T> a, std::span<const std::uint8_t> key_mask) {
    const Tensor<T>& av = a.value();
    require_rank2("softmax_rows", av);
    const std::size_t rows = av.rows(), cols = av.cols();
    if (!key_mask.empty() && key_mask.size() != cols) {
        throw ShapeError("softmax_rows: key mask of length " + std::to_string(key_mask.size()) + " for " +
                         std::to_string(cols) + " columns");
    }
    const bool masked = !key_mask.empty();
    if (masked && std::none_of(key_mask.begin(), key_mask.end(), [](std::uint8_t m) { return m != 0; })) {
        throw std::invalid_argument("softmax_rows: key mask excludes every column");
    }
    Tensor<T> out = Tensor<T>::matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* x = av.data() + r * cols;
        T* y = out.data() + r * cols;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            if (!masked || key_mask[c]) {
                mx = std::max(mx, x[c]);
            }
        }
        T total{0};
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] = (!masked || key_mask[c]) ? std::exp(x[c] - mx) : T{0};
            total += y[c];
        }
        const T inv = T{1} / total;
        for (std::size_t c = 0; c < cols; ++c) {
            y[c] *= inv;
        }
    }
    return a.graph->emit(std::move(out), {a}, [a = a.id, rows, cols](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        const Tensor<T>& y = g.value(self);
        Tensor<T>& dx = g.grad(a);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * cols;
            T dot{0};
            for (std::size_t c = 0; c < cols; ++c) {
                dot += dy[o + c] * y[o + c];
            }
            for (std::size_t c = 0; c < cols; ++c) {
                dx[o + c] += y[o + c] * (dy[o + c] - dot);
            }
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T epsilon) {
    const Tensor<T>& xv = x.value();
    require_rank2("layer_norm", xv);
    const std::size_t rows = xv.rows(), n = xv.cols();
    if (gain.value().size() != n) {
        throw ShapeError("layer_norm gain", xv.shape(), gain.value().shape());
    }
    if (bias.value().size() != n) {
        throw ShapeError("layer_norm bias", xv.shape(), bias.value().shape());
    }
    const Tensor<T>& gv = gain.value();
    const Tensor<T>& bv = bias.value();
    Tensor<T> out = Tensor<T>::matrix(rows, n);
    std::vector<T> xhat(rows * n);
    std::vector<T> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.data() + r * n;
        T mean{0};
        for (std::size_t c = 0; c < n; ++c) {
            mean += xr[c];
        }
        mean /= static_cast<T>(n);
        T var{0};
        for (std::size_t c = 0; c < n; ++c) {
            const T d = xr[c] - mean;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T is = T{1} / std::sqrt(var + epsilon);
        inv_std[r] = is;
        for (std::size_t c = 0; c < n; ++c) {
            const T h = (xr[c] - mean) * is;
            xhat[r * n + c] = h;
            out[r * n + c] = h * gv[c] + bv[c];
        }
    }
    return x.graph->emit(
        std::move(out), {x, gain, bias},
        [x = x.id, gain = gain.id, bias = bias.id, rows, n, xhat = std::move(xhat),
         inv_std = std::move(inv_std)](Graph<T>& g, std::size_t self) {
            const Tensor<T>& dy = g.grad(self);
            const Tensor<T>& gv = g.value(gain);
            if (g.requires_grad(gain)) {
                Tensor<T>& dg = g.grad(gain);
                for (std::size_t i = 0; i < rows * n; ++i) {
                    dg[i % n] += dy[i] * xhat[i];
                }
            }
            if (g.requires_grad(bias)) {
                Tensor<T>& db = g.grad(bias);
                for (std::size_t i = 0; i < rows * n; ++i) {
                    db[i % n] += dy[i];
                }
            }
            if (g.requires_grad(x)) {
                Tensor<T>& dx = g.grad(x);
                std::vector<T> dh(n);
                for (std::size_t r = 0; r < rows; ++r) {
                    const std::size_t o = r * n;
                    T sum_dh{0}, sum_dh_h{0};
                    for (std::size_t c = 0; c < n; ++c) {
                        dh[c] = dy[o + c] * gv[c];
                        sum_dh += dh[c];
                        sum_dh_h += dh[c] * xhat[o + c];
                    }
                    const T k = inv_std[r] / static_cast<T>(n);
                    for (std::size_t c = 0; c < n; ++c) {
                        dx[o + c] += k * (static_cast<T>(n) * dh[c] - sum_dh - xhat[o + c] * sum_dh_h);
                    }
                }
            }
        });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
    const Tensor<T>& tv = table.value();
    require_rank2("embedding", tv);
    const std::size_t vocab = tv.rows(), d = tv.cols();
    Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab) {
            throw std::out_of_range("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                                    std::to_string(vocab) + " rows");
        }
        std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + r * d);
    }
    std::vector<std::int32_t> saved(ids.begin(), ids.end());
    return table.graph->emit(std::move(out), {table},
                             [table = table.id, d, saved = std::move(saved)](Graph<T>& g, std::size_t self) {
                                 const Tensor<T>& dy = g.grad(self);
                                 Tensor<T>& dt = g.grad(table);
                                 for (std::size_t r = 0; r < saved.size(); ++r) {
                                     T* dst = dt.data() + static_cast<std::size_t>(saved[r]) * d;
                                     const T* src = dy.data() + r * d;
                                     for (std::size_t c = 0; c < d; ++c) {
                                         dst[c] += src[c];
                                     }
                                 }
                             });
}

template <typename T>
Var<T> masked_mean_rows(Var<T> x, std::span<const std::uint8_t> row_mask) {
    const Tensor<T>& xv = x.value();
    require_rank2("masked_mean_rows", xv);
    const std::size_t rows = xv.rows(), n = xv.cols();
    if (row_mask.size() != rows) {
        throw ShapeError("masked_mean_rows: mask of length " + std::to_string(row_mask.size()) + " for " +
                         std::to_string(rows) + " rows");
    }
    std::size_t count = 0;
    Tensor<T> out = Tensor<T>::matrix(1, n);
    for (std::size_t r = 0; r < rows; ++r) {
        if (row_mask[r]) {
            ++count;
            for (std::size_t c = 0; c < n; ++c) {
                out[c] += xv(r, c);
            }
        }
    }
    if (count == 0) {
        throw std::invalid_argument("masked_mean_rows: no row selected");
    }
    const T inv = T{1} / static_cast<T>(count);
    for (T& v : out.values()) {
        v *= inv;
    }
    std::vector<std::uint8_t> mask(row_mask.begin(), row_mask.end());
    return x.graph->emit(std::move(out), {x}, [x = x.id, n, inv, mask = std::move(mask)](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        Tensor<T>& dx = g.grad(x);
        for (std::size_t r = 0; r < mask.size(); ++r) {
            if (mask[r]) {
                for (std::size_t c = 0; c < n; ++c) {
                    dx[r * n + c] += dy[c] * inv;
                }
            }
        }
    });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: nothing to concatenate");
    }
    const std::size_t rows = parts[0].value().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var<T>& p : parts) {
        const Tensor<T>& pv = p.value();
        require_rank2("concat_cols", pv);
        if (pv.rows() != rows) {
            throw ShapeError("concat_cols", parts[0].value().shape(), pv.shape());
        }
        widths.push_back(pv.cols());
        total += pv.cols();
    }
    Tensor<T> out = Tensor<T>::matrix(rows, total);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Tensor<T>& pv = parts[i].value();
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(pv.data() + r * widths[i], widths[i], out.data() + r * total + offset);
        }
        offset += widths[i];
    }
    std::vector<std::size_t> ids;
    for (const Var<T>& p : parts) {
        ids.push_back(p.id);
    }
    return parts[0].graph->emit(
        std::move(out), parts,
        [ids = std::move(ids), widths = std::move(widths), rows, total](Graph<T>& g, std::size_t self) {
            const Tensor<T>& dy = g.grad(self);
            std::size_t offset = 0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (g.requires_grad(ids[i])) {
                    Tensor<T>& dx = g.grad(ids[i]);
                    for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < widths[i]; ++c) {
                            dx[r * widths[i] + c] += dy[r * total + offset + c];
                        }
                    }
                }
                offset += widths[i];
            }
        });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t width) {
    const Tensor<T>& xv = x.value();
    require_rank2("slice_cols", xv);
    const std::size_t rows = xv.rows(), n = xv.cols();
    if (start + width > n) {
        throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") outside " + shape_string(xv.shape()));
    }
    Tensor<T> out = Tensor<T>::matrix(rows, width);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(xv.data() + r * n + start, width, out.data() + r * width);
    }
    return x.graph->emit(std::move(out), {x}, [x = x.id, rows, n, start, width](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        Tensor<T>& dx = g.grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                dx[r * n + start + c] += dy[r * width + c];
            }
        }
    });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: nothing to concatenate");
    }
    const std::size_t n = parts[0].value().cols();
    std::size_t rows = 0;
    for (const Var<T>& p : parts) {
        require_rank2("concat_rows", p.value());
        if (p.value().cols() != n) {
            throw ShapeError("concat_rows", parts[0].value().shape(), p.value().shape());
        }
        rows += p.value().rows();
    }
    Tensor<T> out = Tensor<T>::matrix(rows, n);
    std::vector<std::size_t> ids, sizes;
    std::size_t offset = 0;
    for (const Var<T>& p : parts) {
        const Tensor<T>& pv = p.value();
        std::copy(pv.values().begin(), pv.values().end(), out.data() + offset);
        offset += pv.size();
        ids.push_back(p.id);
        sizes.push_back(pv.size());
    }
    return parts[0].graph->emit(std::move(out), parts,
                                [ids = std::move(ids), sizes = std::move(sizes)](Graph<T>& g, std::size_t self) {
                                    const Tensor<T>& dy = g.grad(self);
                                    std::size_t offset = 0;
                                    for (std::size_t i = 0; i < ids.size(); ++i) {
                                        if (g.requires_grad(ids[i])) {
                                            Tensor<T>& dx = g.grad(ids[i]);
                                            for (std::size_t k = 0; k < sizes[i]; ++k) {
                                                dx[k] += dy[offset + k];
                                            }
                                        }
                                        offset += sizes[i];
                                    }
                                });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
    const Tensor<T>& xv = x.value();
    require_rank2("gather_rows", xv);
    const std::size_t n = xv.cols();
    Tensor<T> out = Tensor<T>::matrix(rows.size(), n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= xv.rows()) {
            throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " outside " +
                                    shape_string(xv.shape()));
        }
        std::copy_n(xv.data() + rows[i] * n, n, out.data() + i * n);
    }
    std::vector<std::size_t> saved(rows.begin(), rows.end());
    return x.graph->emit(std::move(out), {x}, [x = x.id, n, saved = std::move(saved)](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        Tensor<T>& dx = g.grad(x);
        for (std::size_t i = 0; i < saved.size(); ++i) {
            for (std::size_t c = 0; c < n; ++c) {
                dx[saved[i] * n + c] += dy[i * n + c];
            }
        }
    });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int64_t> targets) {
    const Tensor<T>& lv = logits.value();
    require_rank2("cross_entropy", lv);
    const std::size_t rows = lv.rows(), classes = lv.cols();
    if (targets.size() != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_string(lv.shape()));
    }
    std::vector<T> probs(rows * classes, T{0});
    std::size_t count = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::int64_t t = targets[r];
        if (t == kIgnoreIndex) {
            continue;
        }
        if (t < 0 || static_cast<std::size_t>(t) >= classes) {
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside " +
                                    std::to_string(classes) + " classes");
        }
        const T* x = lv.data() + r * classes;
        T mx = *std::max_element(x, x + classes);
        T z{0};
        for (std::size_t c = 0; c < classes; ++c) {
            const T e = std::exp(x[c] - mx);
            probs[r * classes + c] = e;
            z += e;
        }
        for (std::size_t c = 0; c < classes; ++c) {
            probs[r * classes + c] /= z;
        }
        total += static_cast<double>(std::log(z) + mx - x[t]);
        ++count;
    }
    if (count == 0) {
        throw std::invalid_argument("cross_entropy: every target is ignored");
    }
    const T inv = T{1} / static_cast<T>(count);
    std::vector<std::int64_t> saved(targets.begin(), targets.end());
    return logits.graph->emit(
        Tensor<T>({1, 1}, static_cast<T>(total / static_cast<double>(count))), {logits},
        [logits = logits.id, classes, inv, probs = std::move(probs), saved = std::move(saved)](Graph<T>& g,
                                                                                                std::size_t self) {
            const T d = g.grad(self)[0] * inv;
            Tensor<T>& dx = g.grad(logits);
            for (std::size_t r = 0; r < saved.size(); ++r) {
                if (saved[r] == kIgnoreIndex) {
                    continue;
                }
                for (std::size_t c = 0; c < classes; ++c) {
                    dx[r * classes + c] += d * probs[r * classes + c];
                }
                dx[r * classes + static_cast<std::size_t>(saved[r])] -= d;
            }
        });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
    if (rate <= 0.0) {
        return x;
    }
    if (rate >= 1.0) {
        throw std::invalid_argument("dropout: rate must be below 1");
    }
    const Tensor<T>& xv = x.value();
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> factor(xv.size());
    Tensor<T> out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) {
        factor[i] = rng.uniform() < rate ? T{0} : keep_scale;
        out[i] *= factor[i];
    }
    return x.graph->emit(std::move(out), {x}, [x = x.id, factor = std::move(factor)](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        Tensor<T>& dx = g.grad(x);
        for (std::size_t i = 0; i < dy.size(); ++i) {
            dx[i] += dy[i] * factor[i];
        }
    });
}

template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
    const Tensor<T>& xv = x.value();
    require_rank2("l2_normalize_rows", xv);
    const std::size_t rows = xv.rows(), n = xv.cols();
    Tensor<T> out = xv;
    std::vector<T> norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T ss{0};
        for (std::size_t c = 0; c < n; ++c) {
            ss += xv(r, c) * xv(r, c);
        }
        const T norm = std::sqrt(ss);
        if (!(norm > T{0})) {
            throw std::invalid_argument("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
        }
        norms[r] = norm;
        for (std::size_t c = 0; c < n; ++c) {
            out(r, c) /= norm;
        }
    }
    return x.graph->emit(std::move(out), {x}, [x = x.id, n, norms = std::move(norms)](Graph<T>& g, std::size_t self) {
        const Tensor<T>& dy = g.grad(self);
        const Tensor<T>& y = g.value(self);
        Tensor<T>& dx = g.grad(x);
        for (std::size_t r = 0; r < norms.size(); ++r) {
            const std::size_t o = r * n;
            T dot{0};
            for (std::size_t c = 0; c < n; ++c) {
                dot += y[o + c] * dy[o + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
                dx[o + c] += (dy[o + c] - y[o + c] * dot) / norms[r];
            }
        }
    });
}

// ---------------------------------------------------------------- gradient checking

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double grad_check(const std::function<Var<double>(Graph<double>&, Var<double>)>& f, const Tensor<double>& point,
                  double step) {
    Parameter<double> p(point);
    {
        Graph<double> g;
        Var<double> loss = f(g, g.param(p));
        g.backward(loss);
    }
    auto eval = [&] {
        Graph<double> g(GradMode::disabled);
        return g.value(f(g, g.param(p)))[0];
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double saved = p.value[i];
        p.value[i] = saved + step;
        const double up = eval();
        p.value[i] = saved - step;
        const double down = eval();
        p.value[i] = saved;
        worst = std::max(worst, relative_error(p.grad[i], (up - down) / (2.0 * step)));
    }
    return worst;
}

double grad_check_params(const std::function<Var<double>(Graph<double>&)>& loss,
                         std::span<Parameter<double>* const> params, double step, std::size_t max_coords, Rng& rng) {
    for (Parameter<double>* p : params) {
        p->zero_grad();
    }
    {
        Graph<double> g;
        g.backward(loss(g));
    }
    auto eval = [&] {
        Graph<double> g(GradMode::disabled);
        return g.value(loss(g))[0];
    };
    double worst = 0.0;
    for (Parameter<double>* p : params) {
        std::vector<std::size_t> coords(p->value.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (max_coords != 0 && coords.size() > max_coords) {
            rng.shuffle(coords);
            coords.resize(max_coords);
        }
        for (std::size_t i : coords) {
            const double saved = p->value[i];
            p->value[i] = saved + step;
            const double up = eval();
            p->value[i] = saved - step;
            const double down = eval();
            p->value[i] = saved;
            worst = std::max(worst, relative_error(p->grad[i], (up - down) / (2.0 * step)));
        }
    }
    return worst;
}

// ---------------------------------------------------------------- instantiations

#define BUGPRIO_INSTANTIATE(T)                                                              \
    template class Graph<T>;                                                                \
    template Var<T> matmul(Var<T>, Var<T>);                                                 \
    template Var<T> matmul_nt(Var<T>, Var<T>);                                              \
    template Var<T> add(Var<T>, Var<T>);                                                    \
    template Var<T> add_row(Var<T>, Var<T>);                                                \
    template Var<T> mul(Var<T>, Var<T>);                                                    \
    template Var<T> scale(Var<T>, T);                                                       \
    template Var<T> relu(Var<T>);                                                           \
    template Var<T> sum(Var<T>);                                                            \
    template Var<T> softmax_rows(Var<T>, std::span<const std::uint8_t>);                    \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                  \
    template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                       \
    template Var<T> masked_mean_rows(Var<T>, std::span<const std::uint8_t>);                \
    template Var<T> concat_cols(std::span<const Var<T>>);                                   \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                           \
    template Var<T> concat_rows(std::span<const Var<T>>);                                   \
    template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                      \
    template Var<T> cross_entropy(Var<T>, std::span<const std::int64_t>);                   \
    template Var<T> dropout(Var<T>, double, Rng&);                                          \
    template Var<T> l2_normalize_rows(Var<T>);

BUGPRIO_INSTANTIATE(float)
BUGPRIO_INSTANTIATE(double)

#undef BUGPRIO_INSTANTIATE

}  // namespace bugprio::ad
