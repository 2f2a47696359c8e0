#include "melreport/gradcheck_suite.hpp"

#include <random>

#include "melreport/decoder.hpp"
#include "melreport/losses.hpp"
#include "melreport/perceiver.hpp"

namespace melreport {

std::string to_string(CheckedComponent c)
{
    switch (c) {
    case CheckedComponent::contrastive: return "contrastive";
    case CheckedComponent::captioning: return "captioning";
    case CheckedComponent::attention_pool: return "attention_pool";
    case CheckedComponent::perceiver_block: return "perceiver_block";
    case CheckedComponent::unimodal_block: return "unimodal_block";
    case CheckedComponent::multimodal_block: return "multimodal_block";
    }
    return "?";
}

CheckedComponent parse_checked_component(std::string_view text)
{
    for (auto c : all_checked_components()) {
        if (to_string(c) == text) return c;
    }
    throw ConfigError("unknown grad-check component '" + std::string(text) + "'");
}

std::vector<CheckedComponent> all_checked_components()
{
    return {CheckedComponent::contrastive,     CheckedComponent::captioning,     CheckedComponent::attention_pool,
            CheckedComponent::perceiver_block, CheckedComponent::unimodal_block, CheckedComponent::multimodal_block};
}

namespace {

// Scalar probe: sum(x ⊙ W) with a fixed random W, so every output
// coordinate carries a distinct weight.
template <class T>
Var<T> probe(Var<T> x, const Tensor<double>& w)
{
    return ag::sum(ag::mul(x, x.graph->constant(w.cast<T>())));
}

Tensor<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng)
{
    return normal_tensor<double>(r, c, 1.0, rng);
}

DecoderConfig tiny_decoder(std::size_t uni, std::size_t mm)
{
    DecoderConfig d;
    d.vocab_size = 11;
    d.model_dim = 8;
    d.n_unimodal_layers = uni;
    d.n_multimodal_layers = mm;
    d.n_heads = 2;
    d.max_seq_len = 8;
    d.contrastive_dim = 6;
    d.image_dim = 8;
    d.ff_mult = 2;
    return d;
}

}  // namespace

GradCheckReport check_component(CheckedComponent c, Precision precision, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    ParamStore<double> ps;
    GradCheckOptions opts;
    opts.precision = precision;
    opts.seed = seed;

    switch (c) {
    case CheckedComponent::contrastive: {
        ps.add("image", random_matrix(4, 6, rng));
        ps.add("text", random_matrix(4, 6, rng));
        ps.add("log_inv_tau", Tensor<double>(1, 1, 1.5));
        return grad_check(
            [](auto& g, auto& p) { return contrastive_loss(g.param(p.get("image")), g.param(p.get("text")), g.param(p.get("log_inv_tau"))); },
            ps, opts);
    }
    case CheckedComponent::captioning: {
        ps.add("logits_a", random_matrix(3, 7, rng));
        ps.add("logits_b", random_matrix(5, 7, rng));
        return grad_check(
            [](auto& g, auto& p) {
                using T = typename std::remove_reference_t<decltype(p)>::value_type;
                std::vector<CaptionItem<T>> items;
                items.push_back({g.param(p.get("logits_a")), {1, 4, 6}, {}});
                items.push_back({g.param(p.get("logits_b")), {2, 0, 3, 5, 0}, {1, 1, 1, 0, 0}});
                return captioning_loss(items);
            },
            ps, opts);
    }
    case CheckedComponent::attention_pool: {
        const TextDecoder<double> dec(tiny_decoder(1, 1));
        dec.init_params(ps, rng);
        ps.for_each([](Parameter<double>& p) { p.trainable = p.name.starts_with("decoder.pool."); });
        ps.add("hidden", random_matrix(5, 8, rng));
        const Tensor<double> w = random_matrix(1, 6, rng);
        const DecoderConfig cfg = dec.config();
        return grad_check(
            [cfg, w](auto& g, auto& p) {
                using T = typename std::remove_reference_t<decltype(p)>::value_type;
                TextDecoder<T> d(cfg);
                LayerContext<T> ctx{g, p};
                const std::vector<std::uint8_t> valid{1, 1, 1, 0, 0};
                return probe(d.attention_pool(ctx, g.param(p.get("hidden")), valid), w);
            },
            ps, opts);
    }
    case CheckedComponent::perceiver_block: {
        PerceiverConfig cfg;
        cfg.input_dim = 6;
        cfg.latent_dim = 8;
        cfg.n_latents_total = 3;
        cfg.n_cross_blocks = 1;
        cfg.n_self_blocks_per_cross = 1;
        cfg.n_heads = 2;
        cfg.contrastive_dim = 8;
        cfg.ff_mult = 2;
        Perceiver<double>(cfg).init_params(ps, rng);
        ps.add("tiles", random_matrix(5, 6, rng));
        const Tensor<double> w_img = random_matrix(2, 8, rng);
        const Tensor<double> w_con = random_matrix(1, 8, rng);
        return grad_check(
            [cfg, w_img, w_con](auto& g, auto& p) {
                using T = typename std::remove_reference_t<decltype(p)>::value_type;
                Perceiver<T> per(cfg);
                LayerContext<T> ctx{g, p};
                auto out = per.forward(ctx, g.param(p.get("tiles")));
                return ag::add(probe(out.image_embeddings, w_img), probe(out.contrastive_raw, w_con));
            },
            ps, opts);
    }
    case CheckedComponent::unimodal_block: {
        const DecoderConfig cfg = tiny_decoder(1, 1);
        TextDecoder<double>(cfg).init_params(ps, rng);
        ps.for_each([](Parameter<double>& p) { p.trainable = p.name.starts_with("decoder.uni") || p.name == "decoder.tok_emb" || p.name == "decoder.pos_emb"; });
        const Tensor<double> w = random_matrix(5, 8, rng);
        return grad_check(
            [cfg, w](auto& g, auto& p) {
                using T = typename std::remove_reference_t<decltype(p)>::value_type;
                TextDecoder<T> d(cfg);
                LayerContext<T> ctx{g, p};
                const std::vector<std::int32_t> tokens{1, 5, 7, 3, 9};
                return probe(d.unimodal_forward(ctx, tokens), w);
            },
            ps, opts);
    }
    case CheckedComponent::multimodal_block: {
        const DecoderConfig cfg = tiny_decoder(1, 1);
        TextDecoder<double>(cfg).init_params(ps, rng);
        ps.for_each([](Parameter<double>& p) { p.trainable = p.name.starts_with("decoder.mm") || p.name == "decoder.final_ln.gamma" || p.name == "decoder.final_ln.beta"; });
        ps.add("hidden", random_matrix(4, 8, rng));
        ps.add("image", random_matrix(3, 8, rng));
        return grad_check(
            [cfg](auto& g, auto& p) {
                using T = typename std::remove_reference_t<decltype(p)>::value_type;
                TextDecoder<T> d(cfg);
                LayerContext<T> ctx{g, p};
                Var<T> logits = d.multimodal_forward(ctx, g.param(p.get("hidden")), g.param(p.get("image")));
                return ag::cross_entropy(logits, std::vector<std::int32_t>{4, 2, 9, 1});
            },
            ps, opts);
    }
    }
    throw ContractError("check_component: unknown component");
}

}  // namespace melreport
