#include "melreport/decoder.hpp"

namespace melreport {

void DecoderConfig::validate() const
{
    if (n_unimodal_layers < 1 || n_multimodal_layers < 1) throw ConfigError("decoder: layer counts must be >= 1");
    if (max_seq_len < 2) throw ConfigError("decoder: max_seq_len must be >= 2");
    if (vocab_size == 0 || model_dim == 0 || contrastive_dim == 0 || image_dim == 0) {
        throw ConfigError("decoder: dimensions must be positive");
    }
    if (n_heads == 0 || model_dim % n_heads != 0) throw ConfigError("decoder: model_dim must be divisible by n_heads");
    if (ff_mult == 0) throw ConfigError("decoder: ff_mult must be positive");
}

void LoraConfig::validate() const
{
    if (rank < 1) throw ConfigError("lora: rank must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("lora: alpha must be positive");
}

template <class T>
TextDecoder<T>::TextDecoder(DecoderConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix))
{
    cfg_.validate();
}

template <class T>
void TextDecoder<T>::init_params(ParamStore<T>& ps, std::mt19937_64& rng) const
{
    const auto& c = cfg_;
    const std::size_t ff = c.ff_mult * c.model_dim;
    ps.add(prefix_ + ".tok_emb", normal_tensor<T>(c.vocab_size, c.model_dim, 0.02, rng));
    ps.add(prefix_ + ".pos_emb", normal_tensor<T>(c.max_seq_len, c.model_dim, 0.02, rng));
    for (std::size_t l = 0; l < c.n_unimodal_layers; ++l) {
        const std::string b = prefix_ + ".uni" + std::to_string(l);
        layers::init_layer_norm(ps, b + ".attn_ln", c.model_dim);
        layers::init_attention(ps, b + ".attn", c.model_dim, c.model_dim, rng);
        layers::init_layer_norm(ps, b + ".ff_ln", c.model_dim);
        layers::init_feed_forward(ps, b + ".ff", c.model_dim, ff, rng);
    }
    ps.add(prefix_ + ".pool.query", normal_tensor<T>(1, c.model_dim, 1.0, rng));
    layers::init_layer_norm(ps, prefix_ + ".pool.ln", c.model_dim);
    layers::init_attention(ps, prefix_ + ".pool.attn", c.model_dim, c.model_dim, rng);
    layers::init_linear(ps, prefix_ + ".pool.proj", c.model_dim, c.contrastive_dim, rng, false);
    for (std::size_t l = 0; l < c.n_multimodal_layers; ++l) {
        const std::string b = prefix_ + ".mm" + std::to_string(l);
        layers::init_layer_norm(ps, b + ".attn_ln", c.model_dim);
        layers::init_attention(ps, b + ".attn", c.model_dim, c.model_dim, rng);
        layers::init_layer_norm(ps, b + ".cross_ln", c.model_dim);
        layers::init_attention(ps, b + ".cross", c.model_dim, c.image_dim, rng);
        layers::init_layer_norm(ps, b + ".ff_ln", c.model_dim);
        layers::init_feed_forward(ps, b + ".ff", c.model_dim, ff, rng);
    }
    layers::init_layer_norm(ps, prefix_ + ".final_ln", c.model_dim);
}

template <class T>
Var<T> TextDecoder<T>::unimodal_forward(LayerContext<T>& ctx, std::span<const std::int32_t> tokens) const
{
    const auto& c = cfg_;
    if (tokens.empty()) throw ContractError("decoder: empty token sequence");
    if (tokens.size() > c.max_seq_len) {
        throw ContractError("decoder: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                            std::to_string(c.max_seq_len));
    }
    for (auto t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
            throw ContractError("decoder: token id " + std::to_string(t) + " outside vocabulary of " +
                                std::to_string(c.vocab_size));
        }
    }
    const ag::AttentionConfig causal{c.model_dim, c.n_heads, true};
    Var<T> h = ag::embedding(ctx.p(prefix_ + ".tok_emb"), tokens);
    h = ag::add(h, ag::slice_rows(ctx.p(prefix_ + ".pos_emb"), 0, tokens.size()));
    for (std::size_t l = 0; l < c.n_unimodal_layers; ++l) {
        const std::string b = prefix_ + ".uni" + std::to_string(l);
        Var<T> a = layers::layer_norm(ctx, b + ".attn_ln", h);
        h = ag::add(h, layers::attention(ctx, b + ".attn", a, a, causal));
        h = ag::add(h, layers::feed_forward(ctx, b + ".ff", layers::layer_norm(ctx, b + ".ff_ln", h)));
    }
    return h;
}

template <class T>
Var<T> TextDecoder<T>::attention_pool(LayerContext<T>& ctx, Var<T> hidden, std::span<const std::uint8_t> valid) const
{
    const auto& c = cfg_;
    if (hidden.cols() != c.model_dim) throw ShapeError("attention_pool: hidden width does not match model_dim");
    if (!valid.empty()) {
        if (valid.size() != hidden.rows()) throw ShapeError("attention_pool: pad mask length mismatch");
        bool any = false;
        for (auto v : valid) any = any || v;
        if (!any) throw ContractError("attention_pool: sequence has no non-pad positions");
    }
    const ag::AttentionConfig attn{c.model_dim, c.n_heads, false};
    Var<T> keys = layers::layer_norm(ctx, prefix_ + ".pool.ln", hidden);
    Var<T> pooled = layers::attention(ctx, prefix_ + ".pool.attn", ctx.p(prefix_ + ".pool.query"), keys, attn, valid);
    return layers::linear(ctx, prefix_ + ".pool.proj", pooled);
}

template <class T>
Var<T> TextDecoder<T>::multimodal_forward(LayerContext<T>& ctx, Var<T> hidden, Var<T> image_embeddings,
                                          bool use_cross_attention) const
{
    const auto& c = cfg_;
    if (hidden.cols() != c.model_dim) throw ShapeError("multimodal_forward: hidden width does not match model_dim");
    if (image_embeddings.cols() != c.image_dim) {
        throw ShapeError("multimodal_forward: image embedding width " + std::to_string(image_embeddings.cols()) +
                         " != configured " + std::to_string(c.image_dim));
    }
    const ag::AttentionConfig causal{c.model_dim, c.n_heads, true};
    const ag::AttentionConfig cross{c.model_dim, c.n_heads, false};
    Var<T> h = hidden;
    for (std::size_t l = 0; l < c.n_multimodal_layers; ++l) {
        const std::string b = prefix_ + ".mm" + std::to_string(l);
        Var<T> a = layers::layer_norm(ctx, b + ".attn_ln", h);
        h = ag::add(h, layers::attention(ctx, b + ".attn", a, a, causal));
        if (use_cross_attention) {
            Var<T> q = layers::layer_norm(ctx, b + ".cross_ln", h);
            h = ag::add(h, layers::attention(ctx, b + ".cross", q, image_embeddings, cross));
        }
        h = ag::add(h, layers::feed_forward(ctx, b + ".ff", layers::layer_norm(ctx, b + ".ff_ln", h)));
    }
    h = layers::layer_norm(ctx, prefix_ + ".final_ln", h);
    return ag::matmul_nt(h, ctx.p(prefix_ + ".tok_emb"));
}

template <class T>
std::vector<std::string> TextDecoder<T>::lora_targets() const
{
    std::vector<std::string> out;
    for (std::size_t l = 0; l < cfg_.n_unimodal_layers; ++l) {
        const std::string b = prefix_ + ".uni" + std::to_string(l) + ".attn";
        out.push_back(b + ".q");
        out.push_back(b + ".v");
    }
    return out;
}

template class TextDecoder<float>;
template class TextDecoder<double>;

}  // namespace melreport
