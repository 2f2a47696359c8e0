#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "melreport/layers.hpp"

namespace melreport {

struct PerceiverConfig {
    std::size_t input_dim = 32;
    std::size_t latent_dim = 32;
    std::size_t n_latents_total = 17;  // cross-attention latents + 1 contrastive latent
    std::size_t n_cross_blocks = 2;
    std::size_t n_self_blocks_per_cross = 2;
    std::size_t n_heads = 4;
    std::size_t contrastive_dim = 32;
    std::size_t ff_mult = 4;

    void validate() const;
    [[nodiscard]] std::size_t n_image_embeddings() const { return n_latents_total - 1; }
};

// Aggregated representation of one case. Rows of image_embeddings feed the
// decoder's cross-attention; contrastive_raw is latent 0 before projection.
template <class T>
struct CaseEmbedding {
    Tensor<T> image_embeddings;
    Tensor<T> contrastive_raw;
};

template <class T>
struct PerceiverOutput {
    Var<T> image_embeddings;  // (n_latents_total - 1) × latent_dim
    Var<T> contrastive_raw;   // 1 × latent_dim
};

// Learned latent array that cross-attends to an unordered set of tile
// features, followed by latent self-attention, repeated n_cross_blocks
// times. Tiles carry no positional information, so the output does not
// depend on their order.
template <class T>
class Perceiver {
public:
    explicit Perceiver(PerceiverConfig cfg, std::string prefix = "perceiver");

    void init_params(ParamStore<T>& ps, std::mt19937_64& rng) const;

    PerceiverOutput<T> forward(LayerContext<T>& ctx, Var<T> tiles) const;

    // Inference helper on a detached graph.
    CaseEmbedding<T> aggregate(ParamStore<T>& ps, const Tensor<T>& tiles) const;

    [[nodiscard]] const PerceiverConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const std::string& prefix() const noexcept { return prefix_; }

private:
    PerceiverConfig cfg_;
    std::string prefix_;
};

// Uniform sample without replacement of at most max_tiles rows, keeping the
// original row order. Identity when the set is already small enough.
template <class T>
Tensor<T> subsample_tiles(const Tensor<T>& tiles, std::size_t max_tiles, std::uint64_t seed);

std::vector<std::size_t> subsample_indices(std::size_t n_tiles, std::size_t max_tiles, std::uint64_t seed);

}  // namespace melreport
