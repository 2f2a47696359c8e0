#pragma once

// Central-difference gradient verification.
//
// The loss function is any callable usable as
//     Var<T> fn(Graph<T>&, ParamStore<T>&)
// for T = float and T = double. Numeric gradients are always taken in double
// precision; analytic gradients come from the requested precision, so the
// 32-bit check compares the float backward pass against a 64-bit oracle.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "melreport/autograd.hpp"

namespace melreport {

enum class Precision { f32, f64 };

struct GradCheckOptions {
    Precision precision = Precision::f64;
    double step = 1e-5;
    std::size_t coords_per_tensor = 64;
    std::uint64_t seed = 0;
    double tolerance = -1.0;  // < 0: 1e-3 for f32, 1e-6 for f64
    // Coordinates whose gradient is tiny relative to the largest numeric
    // gradient of the whole check are compared against this fraction of it.
    // Some gradients are identically zero (e.g. key biases under softmax).
    double scale_floor = 1e-2;

    [[nodiscard]] double effective_tolerance() const
    {
        if (tolerance >= 0) return tolerance;
        return precision == Precision::f32 ? 1e-3 : 1e-6;
    }
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t coords_checked = 0;
    double tolerance = 0.0;
    bool passed = true;
};

namespace detail {

template <class T, class Fn>
std::vector<Tensor<double>> analytic_gradients(Fn& fn, const ParamStore<double>& params)
{
    ParamStore<T> store = params.template cast<T>();
    store.zero_grad();
    Graph<T> g;
    Var<T> loss = fn(g, store);
    g.backward(loss);
    std::vector<Tensor<double>> out;
    store.for_each([&](const Parameter<T>& p) { out.push_back(p.grad.template cast<double>()); });
    return out;
}

template <class Fn>
double eval_loss(Fn& fn, ParamStore<double>& store)
{
    Graph<double> g(false);
    Var<double> loss = fn(g, store);
    const auto& v = loss.value();
    if (v.size() != 1) throw ContractError("grad_check: loss must be scalar");
    return v.data[0];
}

}  // namespace detail

template <class Fn>
GradCheckReport grad_check(Fn&& fn, const ParamStore<double>& params, const GradCheckOptions& opts = {})
{
    GradCheckReport report;
    report.tolerance = opts.effective_tolerance();

    const auto analytic = opts.precision == Precision::f32 ? detail::analytic_gradients<float>(fn, params)
                                                           : detail::analytic_gradients<double>(fn, params);
    ParamStore<double> work = params;
    std::mt19937_64 rng(opts.seed);

    struct Checked {
        std::size_t param;
        std::size_t index;
        double numeric;
    };
    std::vector<Checked> checked;
    double scale = 0.0;
    for (std::size_t pi = 0; pi < work.size(); ++pi) {
        auto& p = work[pi];
        if (!p.trainable) continue;
        std::vector<std::size_t> coords(p.value.size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (coords.size() > opts.coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.coords_per_tensor);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t idx : coords) {
            double& x = p.value.data[idx];
            const double saved = x;
            x = saved + opts.step;
            const double up = detail::eval_loss(fn, work);
            x = saved - opts.step;
            const double down = detail::eval_loss(fn, work);
            x = saved;
            const double numeric = (up - down) / (2.0 * opts.step);
            checked.push_back({pi, idx, numeric});
            scale = std::max(scale, std::abs(numeric));
        }
    }
    for (const auto& c : checked) {
        const double a = analytic[c.param].data[c.index];
        const double n = c.numeric;
        const double denom = std::max({std::abs(a), std::abs(n), opts.scale_floor * scale});
        const double rel = denom == 0.0 ? 0.0 : std::abs(a - n) / denom;
        ++report.coords_checked;
        if (rel > report.max_rel_err || report.worst_param.empty()) {
            report.max_rel_err = rel;
            report.worst_param = work[c.param].name;
            report.worst_index = c.index;
        }
    }
    report.passed = report.max_rel_err <= report.tolerance;
    return report;
}

}  // namespace melreport
