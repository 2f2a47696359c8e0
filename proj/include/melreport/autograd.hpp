#pragma once

// Tape-based reverse-mode differentiation over row-major matrices.
//
// A Graph records every operation of one forward pass. Parameters enter as
// leaves that alias the store's tensors; backward() accumulates gradients
// into Parameter::grad. Frozen parameters (trainable == false) enter as
// constants, so no gradient work is done for them or for subgraphs that
// depend only on constants.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "melreport/errors.hpp"
#include "melreport/parameters.hpp"
#include "melreport/tensor.hpp"

namespace melreport {

template <class T>
class Graph;

template <class T>
struct Var {
    Graph<T>* graph = nullptr;
    std::size_t id = 0;

    [[nodiscard]] const Tensor<T>& value() const { return graph->value(*this); }
    [[nodiscard]] std::size_t rows() const { return value().rows; }
    [[nodiscard]] std::size_t cols() const { return value().cols; }
};

template <class T>
class Graph {
public:
    using value_type = T;

    // With record == false nothing requires a gradient and no backward
    // closures are kept; used for inference.
    explicit Graph(bool record = true) : record_(record) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var<T> constant(Tensor<T> v) { return push(std::move(v), false, {}); }

    // Differentiable input that is not a registered parameter.
    Var<T> leaf(Tensor<T> v) { return push(std::move(v), record_, {}); }

    Var<T> param(Parameter<T>& p)
    {
        Node n;
        n.external = &p.value;
        n.requires_grad = record_ && p.trainable;
        n.param = n.requires_grad ? &p : nullptr;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    [[nodiscard]] const Tensor<T>& value(Var<T> v) const
    {
        const Node& n = nodes_[v.id];
        return n.external ? *n.external : n.value;
    }

    [[nodiscard]] bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
    [[nodiscard]] bool recording() const noexcept { return record_; }
    [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }

    // Gradient buffer of a node, allocated on first use.
    Tensor<T>& grad(Var<T> v)
    {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) {
            const auto& val = value(v);
            n.grad = Tensor<T>(val.rows, val.cols);
        }
        return n.grad;
    }

    void backward(Var<T> loss)
    {
        const auto& lv = value(loss);
        if (lv.rows != 1 || lv.cols != 1) {
            throw ContractError("backward: loss must be scalar, got " + lv.shape_str());
        }
        if (!nodes_[loss.id].requires_grad) return;
        grad(loss).data[0] = T{1};
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty()) continue;
            if (n.backward) n.backward();
            if (n.param) {
                auto& pg = n.param->grad.data;
                for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad.data[k];
            }
        }
    }

    Var<T> push(Tensor<T> value, bool requires_grad, std::function<void()> backward_fn)
    {
        Node n;
        n.value = std::move(value);
        n.requires_grad = record_ && requires_grad;
        if (n.requires_grad) n.backward = std::move(backward_fn);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        bool requires_grad = false;
        std::function<void()> backward;
        Parameter<T>* param = nullptr;
    };

    bool record_;
    std::vector<Node> nodes_;
};

namespace ag {

namespace detail {

template <class T>
void require_same_graph(Var<T> a, Var<T> b, const char* op)
{
    if (a.graph != b.graph) throw ContractError(std::string(op) + ": operands belong to different graphs");
}

template <class T>
[[noreturn]] void shape_fail(const char* op, const Tensor<T>& a, const Tensor<T>& b)
{
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

// c[m×n] += a[m×k] · b[k×n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = c + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = ai[p];
            if (av == T{0}) continue;
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n)
{
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* bj = b + j * k;
            T s{0};
            for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

// c[m×n] += a[k×m]ᵀ · b[k×n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t k, std::size_t m, std::size_t n)
{
    for (std::size_t p = 0; p < k; ++p) {
        const T* ap = a + p * m;
        const T* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = ap[i];
            if (av == T{0}) continue;
            T* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace detail

template <class T>
Var<T> matmul(Var<T> a, Var<T> b)
{
    detail::require_same_graph(a, b, "matmul");
    Graph<T>& g = *a.graph;
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols != bv.rows) detail::shape_fail("matmul", av, bv);
    const std::size_t m = av.rows, k = av.cols, n = bv.cols;
    Tensor<T> out(m, n);
    detail::gemm_nn(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg, [&g, a, b, id, m, k, n] {
        const auto& dc = g.grad(Var<T>{&g, id});
        if (g.requires_grad(a)) detail::gemm_nt(dc.data.data(), b.value().data.data(), g.grad(a).data.data(), m, n, k);
        if (g.requires_grad(b)) detail::gemm_tn(a.value().data.data(), dc.data.data(), g.grad(b).data.data(), m, k, n);
    });
}

// a[m×k] · b[n×k]ᵀ
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b)
{
    detail::require_same_graph(a, b, "matmul_nt");
    Graph<T>& g = *a.graph;
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.cols != bv.cols) detail::shape_fail("matmul_nt", av, bv);
    const std::size_t m = av.rows, k = av.cols, n = bv.rows;
    Tensor<T> out(m, n);
    detail::gemm_nt(av.data.data(), bv.data.data(), out.data.data(), m, k, n);
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg, [&g, a, b, id, m, k, n] {
        const auto& dc = g.grad(Var<T>{&g, id});
        if (g.requires_grad(a)) detail::gemm_nn(dc.data.data(), b.value().data.data(), g.grad(a).data.data(), m, n, k);
        if (g.requires_grad(b)) detail::gemm_tn(dc.data.data(), a.value().data.data(), g.grad(b).data.data(), m, n, k);
    });
}

// x[m×in] · W[out×in]ᵀ + bias[1×out]
template <class T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> bias = std::nullopt)
{
    detail::require_same_graph(x, w, "linear");
    Graph<T>& g = *x.graph;
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (xv.cols != wv.cols) detail::shape_fail("linear", xv, wv);
    const std::size_t m = xv.rows, in = xv.cols, out_dim = wv.rows;
    Tensor<T> out(m, out_dim);
    if (bias) {
        const auto& bv = bias->value();
        if (bv.rows != 1 || bv.cols != out_dim) detail::shape_fail("linear(bias)", wv, bv);
        for (std::size_t i = 0; i < m; ++i) std::copy(bv.data.begin(), bv.data.end(), out.row(i).begin());
    }
    detail::gemm_nt(xv.data.data(), wv.data.data(), out.data.data(), m, in, out_dim);
    const bool rg = g.requires_grad(x) || g.requires_grad(w) || (bias && g.requires_grad(*bias));
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg, [&g, x, w, bias, id, m, in, out_dim] {
        const auto& dy = g.grad(Var<T>{&g, id});
        if (g.requires_grad(x)) detail::gemm_nn(dy.data.data(), w.value().data.data(), g.grad(x).data.data(), m, out_dim, in);
        if (g.requires_grad(w)) detail::gemm_tn(dy.data.data(), x.value().data.data(), g.grad(w).data.data(), m, out_dim, in);
        if (bias && g.requires_grad(*bias)) {
            auto& db = g.grad(*bias);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < out_dim; ++j) db.data[j] += dy(i, j);
        }
    });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b)
{
    detail::require_same_graph(a, b, "add");
    Graph<T>& g = *a.graph;
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rows != bv.rows || av.cols != bv.cols) detail::shape_fail("add", av, bv);
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg, [&g, a, b, id] {
        const auto& dy = g.grad(Var<T>{&g, id});
        for (Var<T> v : {a, b}) {
            if (!g.requires_grad(v)) continue;
            auto& dv = g.grad(v);
            for (std::size_t i = 0; i < dy.data.size(); ++i) dv.data[i] += dy.data[i];
        }
    });
}

// a[m×n] + row[1×n] broadcast over rows.
template <class T>
Var<T> add_row(Var<T> a, Var<T> row)
{
    detail::require_same_graph(a, row, "add_row");
    Graph<T>& g = *a.graph;
    const auto& av = a.value();
    const auto& rv = row.value();
    if (rv.rows != 1 || rv.cols != av.cols) detail::shape_fail("add_row", av, rv);
    Tensor<T> out = av;
    for (std::size_t i = 0; i < av.rows; ++i)
        for (std::size_t j = 0; j < av.cols; ++j) out(i, j) += rv.data[j];
    const bool rg = g.requires_grad(a) || g.requires_grad(row);
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg, [&g, a, row, id] {
        const auto& dy = g.grad(Var<T>{&g, id});
        if (g.requires_grad(a)) {
            auto& da = g.grad(a);
            for (std::size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i];
        }
        if (g.requires_grad(row)) {
            auto& dr = g.grad(row);
            for (std::size_t i = 0; i < dy.rows; ++i)
                for (std::size_t j = 0; j < dy.cols; ++j) dr.data[j] += dy(i, j);
        }
    });
}

template <class T>
Var<T> scale(Var<T> a, T s)
{
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.value();
    for (auto& v : out.data) v *= s;
    std::size_t id = g.node_count();
    return g.push(std::move(out), g.requires_grad(a), [&g, a, s, id] {
        const auto& dy = g.grad(Var<T>{&g, id});
        auto& da = g.grad(a);
        for (std::size_t i = 0; i < dy.data.size(); ++i) da.data[i] += s * dy.data[i];
    });
}

// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b)
{
    detail::require_same_graph(a, b, "mul");
    Graph<T>& g = *a.graph;
    const auto& av = a.value();
    const auto& bv = b.value();
    if (av.rows != bv.rows || av.cols != bv.cols) detail::shape_fail("mul", av, bv);
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    const bool rg = g.requires_grad(a) || g.requires_grad(b);
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg, [&g, a, b, id] {
        const auto& dy = g.grad(Var<T>{&g, id});
        const auto& av = a.value();
        const auto& bv = b.value();
        if (g.requires_grad(a)) {
            auto& da = g.grad(a);
            for (std::size_t i = 0; i < dy.data.size(); ++i) da.data[i] += dy.data[i] * bv.data[i];
        }
        if (g.requires_grad(b)) {
            auto& db = g.grad(b);
            for (std::size_t i = 0; i < dy.data.size(); ++i) db.data[i] += dy.data[i] * av.data[i];
        }
    });
}

template <class T>
Var<T> sum(Var<T> a)
{
    Graph<T>& g = *a.graph;
    T s{0};
    for (T v : a.value().data) s += v;
    std::size_t id = g.node_count();
    return g.push(Tensor<T>(1, 1, s), g.requires_grad(a), [&g, a, id] {
        const T dy = g.grad(Var<T>{&g, id}).data[0];
        for (auto& v : g.grad(a).data) v += dy;
    });
}

template <class T>
Var<T> mean(Var<T> a)
{
    return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

template <class T>
Var<T> gelu(Var<T> a)
{
    Graph<T>& g = *a.graph;
    Tensor<T> out = a.value();
    const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
    for (auto& v : out.data) v = T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2));
    std::size_t id = g.node_count();
    return g.push(std::move(out), g.requires_grad(a), [&g, a, id, inv_sqrt2] {
        const auto& dy = g.grad(Var<T>{&g, id});
        const auto& x = a.value();
        auto& dx = g.grad(a);
        const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
        for (std::size_t i = 0; i < x.data.size(); ++i) {
            const T v = x.data[i];
            const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
            const T pdf = inv_sqrt2pi * std::exp(T{-0.5} * v * v);
            dx.data[i] += dy.data[i] * (cdf + v * pdf);
        }
    });
}

// Numerically stable row-wise softmax.
template <class T>
Var<T> softmax_rows(Var<T> a)
{
    Graph<T>& g = *a.graph;
    const auto& av = a.value();
    Tensor<T> out(av.rows, av.cols);
    for (std::size_t i = 0; i < av.rows; ++i) {
        auto in = av.row(i);
        auto o = out.row(i);
        const T mx = *std::max_element(in.begin(), in.end());
        T z{0};
        for (std::size_t j = 0; j < in.size(); ++j) z += (o[j] = std::exp(in[j] - mx));
        for (auto& v : o) v /= z;
    }
    std::size_t id = g.node_count();
    return g.push(std::move(out), g.requires_grad(a), [&g, a, id] {
        Var<T> self{&g, id};
        const auto& y = self.value();
        const auto& dy = g.grad(self);
        auto& dx = g.grad(a);
        for (std::size_t i = 0; i < y.rows; ++i) {
            T dot{0};
            for (std::size_t j = 0; j < y.cols; ++j) dot += dy(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols; ++j) dx(i, j) += y(i, j) * (dy(i, j) - dot);
        }
    });
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise layer normalization; gamma/beta (1×n) are optional.
template <class T>
Var<T> layer_norm(Var<T> x, std::optional<Var<T>> gamma, std::optional<Var<T>> beta,
                  T eps = static_cast<T>(kLayerNormEps))
{
    Graph<T>& g = *x.graph;
    const auto& xv = x.value();
    const std::size_t m = xv.rows, n = xv.cols;
    if (gamma && (gamma->rows() != 1 || gamma->cols() != n)) detail::shape_fail("layer_norm(gamma)", xv, gamma->value());
    if (beta && (beta->rows() != 1 || beta->cols() != n)) detail::shape_fail("layer_norm(beta)", xv, beta->value());
    Tensor<T> xhat(m, n);
    std::vector<T> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto r = xv.row(i);
        T mu{0};
        for (T v : r) mu += v;
        mu /= static_cast<T>(n);
        T var{0};
        for (T v : r) var += (v - mu) * (v - mu);
        var /= static_cast<T>(n);
        inv_std[i] = T{1} / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) xhat(i, j) = (r[j] - mu) * inv_std[i];
    }
    Tensor<T> out = xhat;
    if (gamma || beta) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                T v = xhat(i, j);
                if (gamma) v *= gamma->value().data[j];
                if (beta) v += beta->value().data[j];
                out(i, j) = v;
            }
    }
    const bool rg = g.requires_grad(x) || (gamma && g.requires_grad(*gamma)) || (beta && g.requires_grad(*beta));
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg,
                  [&g, x, gamma, beta, id, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                      const auto& dy = g.grad(Var<T>{&g, id});
                      if (gamma && g.requires_grad(*gamma)) {
                          auto& dg = g.grad(*gamma);
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) dg.data[j] += dy(i, j) * xhat(i, j);
                      }
                      if (beta && g.requires_grad(*beta)) {
                          auto& db = g.grad(*beta);
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) db.data[j] += dy(i, j);
                      }
                      if (!g.requires_grad(x)) return;
                      auto& dx = g.grad(x);
                      std::vector<T> dxhat(n);
                      for (std::size_t i = 0; i < m; ++i) {
                          T mean_d{0}, mean_dx{0};
                          for (std::size_t j = 0; j < n; ++j) {
                              dxhat[j] = dy(i, j) * (gamma ? gamma->value().data[j] : T{1});
                              mean_d += dxhat[j];
                              mean_dx += dxhat[j] * xhat(i, j);
                          }
                          mean_d /= static_cast<T>(n);
                          mean_dx /= static_cast<T>(n);
                          for (std::size_t j = 0; j < n; ++j)
                              dx(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
                      }
                  });
}

// Rows of table[V×d] selected by ids.
template <class T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids)
{
    Graph<T>& g = *table.graph;
    const auto& tv = table.value();
    Tensor<T> out(ids.size(), tv.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows) {
            throw ContractError("embedding: token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                std::to_string(tv.rows));
        }
        auto src = tv.row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    std::size_t id = g.node_count();
    return g.push(std::move(out), g.requires_grad(table), [&g, table, id, idv = std::move(idv)] {
        const auto& dy = g.grad(Var<T>{&g, id});
        auto& dt = g.grad(table);
        for (std::size_t i = 0; i < idv.size(); ++i) {
            auto dst = dt.row(static_cast<std::size_t>(idv[i]));
            auto src = dy.row(i);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
    });
}

template <class T>
Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count)
{
    Graph<T>& g = *a.graph;
    const auto& av = a.value();
    if (start + count > av.rows) {
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + av.shape_str());
    }
    Tensor<T> out(count, av.cols);
    std::copy(av.data.begin() + static_cast<std::ptrdiff_t>(start * av.cols),
              av.data.begin() + static_cast<std::ptrdiff_t>((start + count) * av.cols), out.data.begin());
    std::size_t id = g.node_count();
    return g.push(std::move(out), g.requires_grad(a), [&g, a, id, start] {
        const auto& dy = g.grad(Var<T>{&g, id});
        auto& da = g.grad(a);
        const std::size_t off = start * da.cols;
        for (std::size_t i = 0; i < dy.data.size(); ++i) da.data[off + i] += dy.data[i];
    });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts)
{
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    Graph<T>& g = *parts.front().graph;
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    bool rg = false;
    for (const auto& p : parts) {
        if (p.graph != &g) throw ContractError("concat_rows: operands belong to different graphs");
        if (p.cols() != cols) detail::shape_fail("concat_rows", parts.front().value(), p.value());
        rows += p.rows();
        rg = rg || g.requires_grad(p);
    }
    Tensor<T> out(rows, cols);
    auto it = out.data.begin();
    for (const auto& p : parts) it = std::copy(p.value().data.begin(), p.value().data.end(), it);
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg, [&g, parts, id] {
        const auto& dy = g.grad(Var<T>{&g, id});
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t n = p.value().size();
            if (g.requires_grad(p)) {
                auto& dp = g.grad(p);
                for (std::size_t i = 0; i < n; ++i) dp.data[i] += dy.data[off + i];
            }
            off += n;
        }
    });
}

struct AttentionConfig {
    std::size_t model_dim = 0;
    std::size_t n_heads = 1;
    bool causal = false;

    [[nodiscard]] std::size_t head_dim() const { return model_dim / n_heads; }
    void validate() const
    {
        if (n_heads == 0 || model_dim == 0 || model_dim % n_heads != 0) {
            throw ConfigError("attention: model_dim " + std::to_string(model_dim) + " not divisible by n_heads " +
                              std::to_string(n_heads));
        }
    }
};

// Scaled dot-product attention over heads (column blocks of width
// head_dim). q: Tq×d, k/v: Tk×d. key_valid, when non-empty, marks which
// keys may be attended. With causal set, query i sees keys j ≤ i + (Tk − Tq).
// Returns the concatenated heads (Tq×d); output projection is separate.
template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionConfig& cfg, std::span<const std::uint8_t> key_valid = {})
{
    cfg.validate();
    detail::require_same_graph(q, k, "attention");
    detail::require_same_graph(q, v, "attention");
    Graph<T>& g = *q.graph;
    const auto& qv = q.value();
    const auto& kv = k.value();
    const auto& vv = v.value();
    const std::size_t d = cfg.model_dim, tq = qv.rows, tk = kv.rows;
    if (qv.cols != d) detail::shape_fail("attention(q)", qv, kv);
    if (kv.cols != d || vv.cols != d || vv.rows != tk) detail::shape_fail("attention(k,v)", kv, vv);
    if (!key_valid.empty() && key_valid.size() != tk) throw ShapeError("attention: key mask length mismatch");
    if (cfg.causal && tq > tk) throw ShapeError("attention: causal mode needs Tq <= Tk");
    const std::size_t h = cfg.n_heads, hd = cfg.head_dim();
    const T scale_f = T{1} / std::sqrt(static_cast<T>(hd));
    const std::size_t offset = tk - tq;

    // probs[head][i][j], zero for masked keys.
    std::vector<T> probs(h * tq * tk, T{0});
    Tensor<T> out(tq, d);
    for (std::size_t head = 0; head < h; ++head) {
        const std::size_t c0 = head * hd;
        for (std::size_t i = 0; i < tq; ++i) {
            T* p = probs.data() + (head * tq + i) * tk;
            const std::size_t limit = cfg.causal ? std::min(tk, i + offset + 1) : tk;
            T mx = -std::numeric_limits<T>::infinity();
            bool any = false;
            for (std::size_t j = 0; j < limit; ++j) {
                if (!key_valid.empty() && !key_valid[j]) continue;
                T s{0};
                for (std::size_t c = 0; c < hd; ++c) s += qv(i, c0 + c) * kv(j, c0 + c);
                p[j] = s * scale_f;
                mx = std::max(mx, p[j]);
                any = true;
            }
            if (!any) throw ContractError("attention: query row " + std::to_string(i) + " has no visible keys");
            T z{0};
            for (std::size_t j = 0; j < limit; ++j) {
                if (!key_valid.empty() && !key_valid[j]) continue;
                p[j] = std::exp(p[j] - mx);
                z += p[j];
            }
            for (std::size_t j = 0; j < limit; ++j) {
                if (!key_valid.empty() && !key_valid[j]) continue;
                p[j] /= z;
                const T pj = p[j];
                for (std::size_t c = 0; c < hd; ++c) out(i, c0 + c) += pj * vv(j, c0 + c);
            }
        }
    }
    const bool rg = g.requires_grad(q) || g.requires_grad(k) || g.requires_grad(v);
    std::size_t id = g.node_count();
    return g.push(std::move(out), rg, [&g, q, k, v, id, h, hd, tq, tk, scale_f, probs = std::move(probs)] {
        const auto& dout = g.grad(Var<T>{&g, id});
        const auto& qv = q.value();
        const auto& kv = k.value();
        const auto& vv = v.value();
        Tensor<T>* dq = g.requires_grad(q) ? &g.grad(q) : nullptr;
        Tensor<T>* dk = g.requires_grad(k) ? &g.grad(k) : nullptr;
        Tensor<T>* dv = g.requires_grad(v) ? &g.grad(v) : nullptr;
        std::vector<T> dp(tk);
        for (std::size_t head = 0; head < h; ++head) {
            const std::size_t c0 = head * hd;
            for (std::size_t i = 0; i < tq; ++i) {
                const T* p = probs.data() + (head * tq + i) * tk;
                T dot{0};
                for (std::size_t j = 0; j < tk; ++j) {
                    if (p[j] == T{0}) {
                        dp[j] = T{0};
                        continue;
                    }
                    T s{0};
                    for (std::size_t c = 0; c < hd; ++c) s += dout(i, c0 + c) * vv(j, c0 + c);
                    dp[j] = s;
                    dot += s * p[j];
                    if (dv)
                        for (std::size_t c = 0; c < hd; ++c) (*dv)(j, c0 + c) += p[j] * dout(i, c0 + c);
                }
                for (std::size_t j = 0; j < tk; ++j) {
                    if (p[j] == T{0}) continue;
                    const T ds = p[j] * (dp[j] - dot) * scale_f;
                    if (dq)
                        for (std::size_t c = 0; c < hd; ++c) (*dq)(i, c0 + c) += ds * kv(j, c0 + c);
                    if (dk)
                        for (std::size_t c = 0; c < hd; ++c) (*dk)(j, c0 + c) += ds * qv(i, c0 + c);
                }
            }
        }
    });
}

// Mean token negative log-likelihood of targets under row-wise softmax of
// logits, over positions with valid[t] != 0 (all positions when empty).
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> valid = {})
{
    Graph<T>& g = *logits.graph;
    const auto& lv = logits.value();
    if (targets.size() != lv.rows) throw ShapeError("cross_entropy: target length does not match logits rows");
    if (!valid.empty() && valid.size() != lv.rows) throw ShapeError("cross_entropy: mask length mismatch");
    std::size_t count = 0;
    for (std::size_t t = 0; t < lv.rows; ++t) count += valid.empty() || valid[t] ? 1 : 0;
    if (count == 0) throw ContractError("cross_entropy: every target position is padding");
    Tensor<T> probs(lv.rows, lv.cols);
    T loss{0};
    for (std::size_t t = 0; t < lv.rows; ++t) {
        if (!valid.empty() && !valid[t]) continue;
        const auto tgt = targets[t];
        if (tgt < 0 || static_cast<std::size_t>(tgt) >= lv.cols) throw ContractError("cross_entropy: target id out of range");
        auto r = lv.row(t);
        auto pr = probs.row(t);
        const T mx = *std::max_element(r.begin(), r.end());
        T z{0};
        for (std::size_t j = 0; j < r.size(); ++j) z += (pr[j] = std::exp(r[j] - mx));
        for (auto& p : pr) p /= z;
        loss -= r[static_cast<std::size_t>(tgt)] - mx - std::log(z);
    }
    const T inv = T{1} / static_cast<T>(count);
    std::vector<std::int32_t> tg(targets.begin(), targets.end());
    std::vector<std::uint8_t> vm(valid.begin(), valid.end());
    std::size_t id = g.node_count();
    return g.push(Tensor<T>(1, 1, loss * inv), g.requires_grad(logits),
                  [&g, logits, id, inv, probs = std::move(probs), tg = std::move(tg), vm = std::move(vm)] {
                      const T dy = g.grad(Var<T>{&g, id}).data[0] * inv;
                      auto& dl = g.grad(logits);
                      for (std::size_t t = 0; t < probs.rows; ++t) {
                          if (!vm.empty() && !vm[t]) continue;
                          for (std::size_t j = 0; j < probs.cols; ++j) dl(t, j) += dy * probs(t, j);
                          dl(t, static_cast<std::size_t>(tg[t])) -= dy;
                      }
                  });
}

}  // namespace ag
}  // namespace melreport
