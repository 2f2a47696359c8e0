#include "melreport/perceiver.hpp"

#include <algorithm>
#include <numeric>

namespace melreport {

void PerceiverConfig::validate() const
{
    if (n_latents_total < 2) throw ConfigError("perceiver: n_latents_total must be >= 2 (one contrastive latent plus at least one more)");
    if (input_dim == 0 || latent_dim == 0 || contrastive_dim == 0) throw ConfigError("perceiver: dimensions must be positive");
    if (n_cross_blocks == 0) throw ConfigError("perceiver: need at least one cross-attention block");
    if (n_heads == 0 || latent_dim % n_heads != 0) throw ConfigError("perceiver: latent_dim must be divisible by n_heads");
    if (ff_mult == 0) throw ConfigError("perceiver: ff_mult must be positive");
}

template <class T>
Perceiver<T>::Perceiver(PerceiverConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix))
{
    cfg_.validate();
}

template <class T>
void Perceiver<T>::init_params(ParamStore<T>& ps, std::mt19937_64& rng) const
{
    const auto& c = cfg_;
    ps.add(prefix_ + ".latents", normal_tensor<T>(c.n_latents_total, c.latent_dim, 1.0, rng));
    layers::init_layer_norm(ps, prefix_ + ".input_ln", c.input_dim);
    for (std::size_t b = 0; b < c.n_cross_blocks; ++b) {
        const std::string blk = prefix_ + ".block" + std::to_string(b);
        layers::init_layer_norm(ps, blk + ".cross_ln", c.latent_dim);
        layers::init_attention(ps, blk + ".cross", c.latent_dim, c.input_dim, rng);
        layers::init_layer_norm(ps, blk + ".cross_ff_ln", c.latent_dim);
        layers::init_feed_forward(ps, blk + ".cross_ff", c.latent_dim, c.ff_mult * c.latent_dim, rng);
        for (std::size_t s = 0; s < c.n_self_blocks_per_cross; ++s) {
            const std::string sb = blk + ".self" + std::to_string(s);
            layers::init_layer_norm(ps, sb + ".attn_ln", c.latent_dim);
            layers::init_attention(ps, sb + ".attn", c.latent_dim, c.latent_dim, rng);
            layers::init_layer_norm(ps, sb + ".ff_ln", c.latent_dim);
            layers::init_feed_forward(ps, sb + ".ff", c.latent_dim, c.ff_mult * c.latent_dim, rng);
        }
    }
    layers::init_layer_norm(ps, prefix_ + ".final_ln", c.latent_dim);
}

template <class T>
PerceiverOutput<T> Perceiver<T>::forward(LayerContext<T>& ctx, Var<T> tiles) const
{
    const auto& c = cfg_;
    if (tiles.rows() == 0) throw ContractError("perceiver: case has no tiles");
    if (tiles.cols() != c.input_dim) {
        throw ShapeError("perceiver: tile feature dimension " + std::to_string(tiles.cols()) + " != configured " +
                         std::to_string(c.input_dim));
    }
    const ag::AttentionConfig attn{c.latent_dim, c.n_heads, false};

    Var<T> inputs = layers::layer_norm(ctx, prefix_ + ".input_ln", tiles);
    Var<T> lat = ctx.p(prefix_ + ".latents");
    for (std::size_t b = 0; b < c.n_cross_blocks; ++b) {
        const std::string blk = prefix_ + ".block" + std::to_string(b);
        Var<T> q = layers::layer_norm(ctx, blk + ".cross_ln", lat);
        lat = ag::add(lat, layers::attention(ctx, blk + ".cross", q, inputs, attn));
        lat = ag::add(lat, layers::feed_forward(ctx, blk + ".cross_ff", layers::layer_norm(ctx, blk + ".cross_ff_ln", lat)));
        for (std::size_t s = 0; s < c.n_self_blocks_per_cross; ++s) {
            const std::string sb = blk + ".self" + std::to_string(s);
            Var<T> h = layers::layer_norm(ctx, sb + ".attn_ln", lat);
            lat = ag::add(lat, layers::attention(ctx, sb + ".attn", h, h, attn));
            lat = ag::add(lat, layers::feed_forward(ctx, sb + ".ff", layers::layer_norm(ctx, sb + ".ff_ln", lat)));
        }
    }
    lat = layers::layer_norm(ctx, prefix_ + ".final_ln", lat);
    return {ag::slice_rows(lat, 1, c.n_latents_total - 1), ag::slice_rows(lat, 0, 1)};
}

template <class T>
CaseEmbedding<T> Perceiver<T>::aggregate(ParamStore<T>& ps, const Tensor<T>& tiles) const
{
    Graph<T> g(false);
    LayerContext<T> ctx{g, ps};
    auto out = forward(ctx, g.constant(tiles));
    return {out.image_embeddings.value(), out.contrastive_raw.value()};
}

std::vector<std::size_t> subsample_indices(std::size_t n_tiles, std::size_t max_tiles, std::uint64_t seed)
{
    if (max_tiles == 0) throw ConfigError("subsample_tiles: max_tiles must be >= 1");
    std::vector<std::size_t> all(n_tiles);
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (n_tiles <= max_tiles) return all;
    std::vector<std::size_t> picked;
    picked.reserve(max_tiles);
    std::mt19937_64 rng(seed);
    std::sample(all.begin(), all.end(), std::back_inserter(picked), max_tiles, rng);
    return picked;
}

template <class T>
Tensor<T> subsample_tiles(const Tensor<T>& tiles, std::size_t max_tiles, std::uint64_t seed)
{
    const auto idx = subsample_indices(tiles.rows, max_tiles, seed);
    if (idx.size() == tiles.rows) return tiles;
    Tensor<T> out(idx.size(), tiles.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = tiles.row(idx[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
}

template class Perceiver<float>;
template class Perceiver<double>;
template Tensor<float> subsample_tiles(const Tensor<float>&, std::size_t, std::uint64_t);
template Tensor<double> subsample_tiles(const Tensor<double>&, std::size_t, std::uint64_t);

}  // namespace melreport
