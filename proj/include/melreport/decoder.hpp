#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "melreport/layers.hpp"

namespace melreport {

struct DecoderConfig {
    std::size_t vocab_size = 512;
    std::size_t model_dim = 32;
    std::size_t n_unimodal_layers = 2;
    std::size_t n_multimodal_layers = 2;
    std::size_t n_heads = 4;
    std::size_t max_seq_len = 128;
    std::size_t contrastive_dim = 32;
    std::size_t image_dim = 32;  // width of the Perceiver's image embeddings
    std::size_t ff_mult = 4;

    void validate() const;
};

struct LoraConfig {
    std::size_t rank = 8;
    double alpha = 16.0;

    void validate() const;
    [[nodiscard]] double scale() const { return alpha / static_cast<double>(rank); }
};

// Decoder-only language model split into a unimodal stack (causal
// self-attention only), an attention-pooling head producing the contrastive
// text embedding, and a multimodal stack whose blocks add cross-attention to
// the image embeddings. The output projection is tied to the token
// embedding matrix.
template <class T>
class TextDecoder {
public:
    explicit TextDecoder(DecoderConfig cfg, std::string prefix = "decoder");

    void init_params(ParamStore<T>& ps, std::mt19937_64& rng) const;

    // tokens → T×model_dim hidden states of the unimodal stack.
    Var<T> unimodal_forward(LayerContext<T>& ctx, std::span<const std::int32_t> tokens) const;

    // Single learned query attends over positions with valid[t] != 0, then a
    // linear map to contrastive_dim. Output is 1×contrastive_dim, unnormalized.
    Var<T> attention_pool(LayerContext<T>& ctx, Var<T> hidden, std::span<const std::uint8_t> valid = {}) const;

    // Multimodal stack on top of unimodal hidden states; returns T×vocab_size
    // logits. With use_cross_attention == false the cross-attention
    // sublayers are skipped (text-only decoding).
    Var<T> multimodal_forward(LayerContext<T>& ctx, Var<T> hidden, Var<T> image_embeddings,
                              bool use_cross_attention = true) const;

    [[nodiscard]] const DecoderConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const std::string& prefix() const noexcept { return prefix_; }

    // Names of the LoRA target matrices (query and value projections of
    // every unimodal self-attention).
    [[nodiscard]] std::vector<std::string> lora_targets() const;

private:
    DecoderConfig cfg_;
    std::string prefix_;
};

}  // namespace melreport
