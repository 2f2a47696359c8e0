#pragma once

// Parameterized building blocks shared by the Perceiver and the text
// decoder. Blocks are addressed by a name prefix inside a ParamStore and
// looked up on every call, so adapters can be added or merged without
// invalidating anything held by the model.

#include <cmath>
#include <optional>
#include <random>
#include <string>

#include "melreport/autograd.hpp"

namespace melreport {

template <class T>
struct LayerContext {
    Graph<T>& graph;
    ParamStore<T>& params;
    double lora_scale = 0.0;  // alpha / rank of active adapters

    Var<T> p(const std::string& name) { return graph.param(params.get(name)); }
};

namespace layers {

template <class T>
void init_linear(ParamStore<T>& ps, const std::string& prefix, std::size_t in, std::size_t out, std::mt19937_64& rng,
                 bool bias = true)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    ps.add(prefix + ".weight", uniform_tensor<T>(out, in, bound, rng));
    if (bias) ps.add(prefix + ".bias", Tensor<T>(1, out));
}

template <class T>
void init_layer_norm(ParamStore<T>& ps, const std::string& prefix, std::size_t dim)
{
    ps.add(prefix + ".gamma", Tensor<T>(1, dim, T{1}));
    ps.add(prefix + ".beta", Tensor<T>(1, dim));
}

// Self-attention when kv_dim == dim; cross-attention projects keys/values
// from kv_dim.
template <class T>
void init_attention(ParamStore<T>& ps, const std::string& prefix, std::size_t dim, std::size_t kv_dim,
                    std::mt19937_64& rng)
{
    init_linear(ps, prefix + ".q", dim, dim, rng);
    init_linear(ps, prefix + ".k", kv_dim, dim, rng);
    init_linear(ps, prefix + ".v", kv_dim, dim, rng);
    init_linear(ps, prefix + ".o", dim, dim, rng);
}

template <class T>
void init_feed_forward(ParamStore<T>& ps, const std::string& prefix, std::size_t dim, std::size_t hidden,
                       std::mt19937_64& rng)
{
    init_linear(ps, prefix + ".fc1", dim, hidden, rng);
    init_linear(ps, prefix + ".fc2", hidden, dim, rng);
}

// x·Wᵀ + b, plus scale·(x·Aᵀ)·Bᵀ when LoRA factors are registered under the
// same prefix.
template <class T>
Var<T> linear(LayerContext<T>& ctx, const std::string& prefix, Var<T> x)
{
    std::optional<Var<T>> bias;
    if (ctx.params.contains(prefix + ".bias")) bias = ctx.p(prefix + ".bias");
    Var<T> y = ag::linear(x, ctx.p(prefix + ".weight"), bias);
    if (ctx.params.contains(prefix + ".lora_a")) {
        Var<T> down = ag::linear(x, ctx.p(prefix + ".lora_a"));
        Var<T> up = ag::linear(down, ctx.p(prefix + ".lora_b"));
        y = ag::add(y, ag::scale(up, static_cast<T>(ctx.lora_scale)));
    }
    return y;
}

template <class T>
Var<T> layer_norm(LayerContext<T>& ctx, const std::string& prefix, Var<T> x)
{
    return ag::layer_norm(x, std::optional{ctx.p(prefix + ".gamma")}, std::optional{ctx.p(prefix + ".beta")});
}

template <class T>
Var<T> attention(LayerContext<T>& ctx, const std::string& prefix, Var<T> queries, Var<T> keys_values,
                 const ag::AttentionConfig& cfg, std::span<const std::uint8_t> key_valid = {})
{
    Var<T> q = linear(ctx, prefix + ".q", queries);
    Var<T> k = linear(ctx, prefix + ".k", keys_values);
    Var<T> v = linear(ctx, prefix + ".v", keys_values);
    Var<T> heads = ag::attention(q, k, v, cfg, key_valid);
    return linear(ctx, prefix + ".o", heads);
}

template <class T>
Var<T> feed_forward(LayerContext<T>& ctx, const std::string& prefix, Var<T> x)
{
    return linear(ctx, prefix + ".fc2", ag::gelu(linear(ctx, prefix + ".fc1", x)));
}

}  // namespace layers
}  // namespace melreport
