#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "melreport/autograd.hpp"

namespace melreport {

struct LossWeights {
    double contrastive = 1.0;
    double captioning = 2.0;
};

// Temperature is learned as log(1/tau); tau is clamped from below.
inline constexpr double kInitialTemperature = 0.07;
inline constexpr double kMinTemperature = 0.01;

// Symmetric InfoNCE over a batch of paired embeddings.
//
// Rows of image (N×d) and text (N×d) are L2-normalized inside the op, the
// similarity matrix S = X·Yᵀ·exp(log_inv_tau) is formed and the loss is
//   −(1/N) [ Σ_i log softmax_row(S)_ii + Σ_i log softmax_col(S)_ii ].
// log_inv_tau is a 1×1 node (a parameter or a constant).
template <class T>
Var<T> contrastive_loss(Var<T> image, Var<T> text, Var<T> log_inv_tau)
{
    Graph<T>& g = *image.graph;
    const auto& xv = image.value();
    const auto& yv = text.value();
    if (xv.rows != yv.rows || xv.cols != yv.cols) ag::detail::shape_fail("contrastive_loss", xv, yv);
    if (log_inv_tau.rows() != 1 || log_inv_tau.cols() != 1) throw ShapeError("contrastive_loss: temperature must be 1x1");
    const std::size_t n = xv.rows, d = xv.cols;
    if (n == 0) throw ContractError("contrastive_loss: empty batch");

    auto normalize = [d](const Tensor<T>& m, const char* which) {
        Tensor<T> out(m.rows, d);
        std::vector<T> norms(m.rows);
        for (std::size_t i = 0; i < m.rows; ++i) {
            T s{0};
            for (T v : m.row(i)) s += v * v;
            const T r = std::sqrt(s);
            if (!(r > T{0})) {
                throw ContractError(std::string("contrastive_loss: zero-norm ") + which + " embedding at row " +
                                    std::to_string(i));
            }
            norms[i] = r;
            for (std::size_t j = 0; j < d; ++j) out(i, j) = m(i, j) / r;
        }
        return std::pair{std::move(out), std::move(norms)};
    };
    auto [xn, xnorm] = normalize(xv, "image");
    auto [yn, ynorm] = normalize(yv, "text");

    const T max_log_scale = static_cast<T>(std::log(1.0 / kMinTemperature));
    const T raw = log_inv_tau.value().data[0];
    const bool clamped = raw > max_log_scale;
    const T logit_scale = std::exp(clamped ? max_log_scale : raw);

    Tensor<T> sim(n, n);  // normalized cosine similarities
    ag::detail::gemm_nt(xn.data.data(), yn.data.data(), sim.data.data(), n, d, n);

    Tensor<T> p_row(n, n), p_col(n, n);
    T loss{0};
    for (std::size_t i = 0; i < n; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, logit_scale * sim(i, j));
        T z{0};
        for (std::size_t j = 0; j < n; ++j) z += (p_row(i, j) = std::exp(logit_scale * sim(i, j) - mx));
        for (std::size_t j = 0; j < n; ++j) p_row(i, j) /= z;
        loss -= logit_scale * sim(i, i) - mx - std::log(z);
    }
    for (std::size_t j = 0; j < n; ++j) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, logit_scale * sim(i, j));
        T z{0};
        for (std::size_t i = 0; i < n; ++i) z += (p_col(i, j) = std::exp(logit_scale * sim(i, j) - mx));
        for (std::size_t i = 0; i < n; ++i) p_col(i, j) /= z;
        loss -= logit_scale * sim(j, j) - mx - std::log(z);
    }
    loss /= static_cast<T>(n);

    const bool rg = g.requires_grad(image) || g.requires_grad(text) || g.requires_grad(log_inv_tau);
    std::size_t id = g.node_count();
    return g.push(Tensor<T>(1, 1, loss), rg,
                  [&g, image, text, log_inv_tau, id, n, d, clamped, logit_scale, xn = std::move(xn),
                   yn = std::move(yn), xnorm = std::move(xnorm), ynorm = std::move(ynorm), sim = std::move(sim),
                   p_row = std::move(p_row), p_col = std::move(p_col)] {
                      const T dy = g.grad(Var<T>{&g, id}).data[0] / static_cast<T>(n);
                      // dL/dS where S = logit_scale * sim
                      Tensor<T> ds(n, n);
                      for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < n; ++j)
                              ds(i, j) = dy * (p_row(i, j) + p_col(i, j) - (i == j ? T{2} : T{0}));
                      if (g.requires_grad(log_inv_tau) && !clamped) {
                          T acc{0};
                          for (std::size_t i = 0; i < ds.data.size(); ++i) acc += ds.data[i] * sim.data[i];
                          g.grad(log_inv_tau).data[0] += acc * logit_scale;
                      }
                      for (auto& v : ds.data) v *= logit_scale;  // now dL/dsim
                      auto backprop_norm = [d](const Tensor<T>& unit, const std::vector<T>& norms, const Tensor<T>& dunit,
                                               Tensor<T>& dst) {
                          for (std::size_t i = 0; i < unit.rows; ++i) {
                              T dot{0};
                              for (std::size_t j = 0; j < d; ++j) dot += unit(i, j) * dunit(i, j);
                              for (std::size_t j = 0; j < d; ++j)
                                  dst(i, j) += (dunit(i, j) - unit(i, j) * dot) / norms[i];
                          }
                      };
                      if (g.requires_grad(image)) {
                          Tensor<T> dxn(n, d);
                          ag::detail::gemm_nn(ds.data.data(), yn.data.data(), dxn.data.data(), n, n, d);
                          backprop_norm(xn, xnorm, dxn, g.grad(image));
                      }
                      if (g.requires_grad(text)) {
                          Tensor<T> dyn(n, d);
                          ag::detail::gemm_tn(ds.data.data(), xn.data.data(), dyn.data.data(), n, n, d);
                          backprop_norm(yn, ynorm, dyn, g.grad(text));
                      }
                  });
}

template <class T>
Var<T> contrastive_loss(Var<T> image, Var<T> text, T tau)
{
    if (!(tau > T{0})) throw ContractError("contrastive_loss: temperature must be positive");
    auto t = image.graph->constant(Tensor<T>(1, 1, static_cast<T>(std::log(1.0 / static_cast<double>(tau)))));
    return contrastive_loss(image, text, t);
}

// One sequence of a captioning batch: logits for every input position and
// the next-token targets (teacher forcing).
template <class T>
struct CaptionItem {
    Var<T> logits;
    std::vector<std::int32_t> targets;
    std::vector<std::uint8_t> valid;  // empty = all positions count
};

// Per-sequence mean token NLL, then mean over the batch.
template <class T>
Var<T> captioning_loss(const std::vector<CaptionItem<T>>& batch)
{
    if (batch.empty()) throw ContractError("captioning_loss: empty batch");
    std::vector<Var<T>> per_seq;
    per_seq.reserve(batch.size());
    for (const auto& item : batch) per_seq.push_back(ag::cross_entropy(item.logits, item.targets, item.valid));
    if (per_seq.size() == 1) return per_seq.front();
    return ag::mean(ag::concat_rows(per_seq));
}

template <class T>
Var<T> total_loss(Var<T> l_con, Var<T> l_cap, const LossWeights& w = {})
{
    return ag::add(ag::scale(l_con, static_cast<T>(w.contrastive)), ag::scale(l_cap, static_cast<T>(w.captioning)));
}

inline double total_loss(double l_con, double l_cap, const LossWeights& w = {})
{
    return w.contrastive * l_con + w.captioning * l_cap;
}

}  // namespace melreport
