#include "melreport/model.hpp"

#include <cmath>

namespace melreport {

std::string to_string(BodyMode mode)
{
    switch (mode) {
    case BodyMode::frozen: return "frozen";
    case BodyMode::full: return "full";
    case BodyMode::lora: return "lora";
    }
    return "?";
}

BodyMode parse_body_mode(std::string_view text)
{
    if (text == "frozen") return BodyMode::frozen;
    if (text == "full") return BodyMode::full;
    if (text == "lora") return BodyMode::lora;
    throw ConfigError("unknown finetuning mode '" + std::string(text) + "' (expected frozen, full or lora)");
}

ParamGroup param_group(std::string_view name)
{
    auto starts = [&](std::string_view p) { return name.substr(0, p.size()) == p; };
    if (starts("perceiver.")) return ParamGroup::perceiver;
    if (starts("head.")) return ParamGroup::contrastive_head;
    if (name.find(".lora_") != std::string_view::npos) return ParamGroup::lora_adapter;
    if (starts("decoder.tok_emb")) return ParamGroup::word_embeddings;
    if (starts("decoder.pool.")) return ParamGroup::attention_pool;
    if (starts("decoder.uni") || starts("decoder.pos_emb")) return ParamGroup::unimodal_body;
    if (starts("decoder.mm") && name.find(".cross") != std::string_view::npos) return ParamGroup::cross_attention;
    if (starts("decoder.")) return ParamGroup::multimodal_body;
    throw ContractError("parameter '" + std::string(name) + "' belongs to no known group");
}

std::string to_string(ParamGroup group)
{
    switch (group) {
    case ParamGroup::perceiver: return "perceiver";
    case ParamGroup::contrastive_head: return "contrastive_head";
    case ParamGroup::word_embeddings: return "word_embeddings";
    case ParamGroup::attention_pool: return "attention_pool";
    case ParamGroup::cross_attention: return "cross_attention";
    case ParamGroup::unimodal_body: return "unimodal_body";
    case ParamGroup::multimodal_body: return "multimodal_body";
    case ParamGroup::lora_adapter: return "lora_adapter";
    }
    return "?";
}

bool TrainabilityPolicy::is_trainable(ParamGroup group) const
{
    switch (group) {
    case ParamGroup::unimodal_body: return unimodal_body == BodyMode::full;
    case ParamGroup::lora_adapter: return unimodal_body == BodyMode::lora;
    case ParamGroup::multimodal_body: return false;
    default: return true;
    }
}

void ModelConfig::validate() const
{
    perceiver.validate();
    decoder.validate();
    if (lora) lora->validate();
    if (decoder.image_dim != perceiver.latent_dim) throw ConfigError("model: decoder.image_dim must equal perceiver.latent_dim");
    if (decoder.contrastive_dim != perceiver.contrastive_dim) {
        throw ConfigError("model: image and text contrastive dimensions differ");
    }
}

ModelConfig ModelConfig::desk(std::size_t feature_dim, std::size_t vocab_size)
{
    ModelConfig cfg;
    cfg.perceiver.input_dim = feature_dim;
    cfg.decoder.vocab_size = vocab_size;
    return cfg;
}

void to_json(nlohmann::json& j, const ModelConfig& cfg)
{
    const auto& p = cfg.perceiver;
    const auto& d = cfg.decoder;
    j = nlohmann::json{
        {"perceiver",
         {{"input_dim", p.input_dim},
          {"latent_dim", p.latent_dim},
          {"n_latents_total", p.n_latents_total},
          {"n_cross_blocks", p.n_cross_blocks},
          {"n_self_blocks_per_cross", p.n_self_blocks_per_cross},
          {"n_heads", p.n_heads},
          {"contrastive_dim", p.contrastive_dim},
          {"ff_mult", p.ff_mult}}},
        {"decoder",
         {{"vocab_size", d.vocab_size},
          {"model_dim", d.model_dim},
          {"n_unimodal_layers", d.n_unimodal_layers},
          {"n_multimodal_layers", d.n_multimodal_layers},
          {"n_heads", d.n_heads},
          {"max_seq_len", d.max_seq_len},
          {"contrastive_dim", d.contrastive_dim},
          {"image_dim", d.image_dim},
          {"ff_mult", d.ff_mult}}},
    };
    if (cfg.lora) j["lora"] = {{"rank", cfg.lora->rank}, {"alpha", cfg.lora->alpha}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg)
{
    const auto& p = j.at("perceiver");
    cfg.perceiver.input_dim = p.at("input_dim");
    cfg.perceiver.latent_dim = p.at("latent_dim");
    cfg.perceiver.n_latents_total = p.at("n_latents_total");
    cfg.perceiver.n_cross_blocks = p.at("n_cross_blocks");
    cfg.perceiver.n_self_blocks_per_cross = p.at("n_self_blocks_per_cross");
    cfg.perceiver.n_heads = p.at("n_heads");
    cfg.perceiver.contrastive_dim = p.at("contrastive_dim");
    cfg.perceiver.ff_mult = p.at("ff_mult");
    const auto& d = j.at("decoder");
    cfg.decoder.vocab_size = d.at("vocab_size");
    cfg.decoder.model_dim = d.at("model_dim");
    cfg.decoder.n_unimodal_layers = d.at("n_unimodal_layers");
    cfg.decoder.n_multimodal_layers = d.at("n_multimodal_layers");
    cfg.decoder.n_heads = d.at("n_heads");
    cfg.decoder.max_seq_len = d.at("max_seq_len");
    cfg.decoder.contrastive_dim = d.at("contrastive_dim");
    cfg.decoder.image_dim = d.at("image_dim");
    cfg.decoder.ff_mult = d.at("ff_mult");
    if (j.contains("lora")) cfg.lora = LoraConfig{j["lora"].at("rank"), j["lora"].at("alpha")};
    else cfg.lora.reset();
}

std::span<const std::int32_t> text_input(std::span<const std::int32_t> tokens)
{
    if (tokens.size() < 2) throw ContractError("text_input: token sequence needs BOS and EOS");
    return tokens.first(tokens.size() - 1);
}

namespace {

template <class T>
std::vector<T> normalized(const Tensor<T>& v)
{
    double s = 0.0;
    for (T x : v.data) s += static_cast<double>(x) * static_cast<double>(x);
    const double r = std::sqrt(s);
    if (!(r > 0.0)) throw ContractError("embedding has zero norm");
    std::vector<T> out(v.data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(v.data[i] / r);
    return out;
}

}  // namespace

template <class T>
CocaModel<T>::CocaModel(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), perceiver_(cfg_.perceiver), decoder_(cfg_.decoder)
{
    cfg_.validate();
    if (cfg_.lora) throw ContractError("model: adapters are attached with apply_lora, not at construction");
    std::mt19937_64 rng(seed);
    perceiver_.init_params(params_, rng);
    layers::init_linear(params_, "head.image_proj", cfg_.perceiver.latent_dim, cfg_.perceiver.contrastive_dim, rng, false);
    params_.add("head.logit_scale", Tensor<T>(1, 1, static_cast<T>(std::log(1.0 / kInitialTemperature))));
    decoder_.init_params(params_, rng);
}

template <class T>
CocaModel<T>::CocaModel(ModelConfig cfg, ParamStore<T> params)
    : cfg_(std::move(cfg)), perceiver_(cfg_.perceiver), decoder_(cfg_.decoder), params_(std::move(params))
{
    cfg_.validate();
}

template <class T>
LayerContext<T> CocaModel<T>::context(Graph<T>& g)
{
    return LayerContext<T>{g, params_, cfg_.lora ? cfg_.lora->scale() : 0.0};
}

template <class T>
Var<T> CocaModel<T>::image_projection(LayerContext<T>& ctx, Var<T> contrastive_raw)
{
    return layers::linear(ctx, "head.image_proj", contrastive_raw);
}

template <class T>
Var<T> CocaModel<T>::log_inv_tau(LayerContext<T>& ctx)
{
    return ctx.p("head.logit_scale");
}

template <class T>
double CocaModel<T>::temperature() const
{
    const double raw = static_cast<double>(params_.get("head.logit_scale").value.data[0]);
    return std::max(kMinTemperature, std::exp(-raw));
}

template <class T>
BatchLosses<T> CocaModel<T>::batch_losses(Graph<T>& g, const std::vector<const CaseExample<T>*>& batch,
                                          const LossWeights& weights)
{
    if (batch.empty()) throw ContractError("batch_losses: empty batch");
    LayerContext<T> ctx = context(g);
    std::vector<Var<T>> image_vecs, text_vecs;
    std::vector<CaptionItem<T>> captions;
    for (const auto* ex : batch) {
        auto img = perceiver_.forward(ctx, g.constant(ex->tiles));
        image_vecs.push_back(image_projection(ctx, img.contrastive_raw));
        auto input = text_input(ex->tokens);
        Var<T> hidden = decoder_.unimodal_forward(ctx, input);
        text_vecs.push_back(decoder_.attention_pool(ctx, hidden));
        Var<T> logits = decoder_.multimodal_forward(ctx, hidden, img.image_embeddings);
        captions.push_back({logits, std::vector<std::int32_t>(ex->tokens.begin() + 1, ex->tokens.end()), {}});
    }
    Var<T> con = contrastive_loss(ag::concat_rows(image_vecs), ag::concat_rows(text_vecs), log_inv_tau(ctx));
    Var<T> cap = captioning_loss(captions);
    return {con, cap, total_loss(con, cap, weights)};
}

template <class T>
CaseEmbedding<T> CocaModel<T>::embed_image(const Tensor<T>& tiles)
{
    return perceiver_.aggregate(params_, tiles);
}

template <class T>
std::vector<T> CocaModel<T>::image_embedding(const CaseEmbedding<T>& emb)
{
    Graph<T> g(false);
    LayerContext<T> ctx = context(g);
    return normalized(image_projection(ctx, g.constant(emb.contrastive_raw)).value());
}

template <class T>
std::vector<T> CocaModel<T>::image_embedding(const Tensor<T>& tiles)
{
    return image_embedding(embed_image(tiles));
}

template <class T>
std::vector<T> CocaModel<T>::text_embedding(std::span<const std::int32_t> tokens)
{
    Graph<T> g(false);
    LayerContext<T> ctx = context(g);
    Var<T> hidden = decoder_.unimodal_forward(ctx, text_input(tokens));
    return normalized(decoder_.attention_pool(ctx, hidden).value());
}

template <class T>
Tensor<T> CocaModel<T>::logits(const CaseEmbedding<T>& emb, std::span<const std::int32_t> tokens)
{
    Graph<T> g(false);
    LayerContext<T> ctx = context(g);
    Var<T> hidden = decoder_.unimodal_forward(ctx, tokens);
    return decoder_.multimodal_forward(ctx, hidden, g.constant(emb.image_embeddings)).value();
}

template <class T>
void CocaModel<T>::apply_policy(const TrainabilityPolicy& policy)
{
    if (policy.unimodal_body == BodyMode::lora && !has_lora()) {
        throw ContractError("apply_policy: lora mode requires attached adapters (call apply_lora first)");
    }
    params_.for_each([&](Parameter<T>& p) { p.trainable = policy.is_trainable(param_group(p.name)); });
}

template <class T>
void CocaModel<T>::apply_lora(const LoraConfig& lora, std::uint64_t seed)
{
    lora.validate();
    if (has_lora()) throw ContractError("apply_lora: adapters already attached");
    std::mt19937_64 rng(seed);
    for (const auto& target : decoder_.lora_targets()) {
        const auto& w = params_.get(target + ".weight").value;
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
        params_.add(target + ".lora_a", uniform_tensor<T>(lora.rank, w.cols, bound, rng));
        params_.add(target + ".lora_b", Tensor<T>(w.rows, lora.rank));
    }
    cfg_.lora = lora;
}

template <class T>
void CocaModel<T>::merge_lora()
{
    if (!has_lora()) throw ContractError("merge_lora: no adapters attached");
    const T s = static_cast<T>(cfg_.lora->scale());
    for (const auto& target : decoder_.lora_targets()) {
        auto& w = params_.get(target + ".weight").value;
        const auto& a = params_.get(target + ".lora_a").value;  // r × in
        const auto& b = params_.get(target + ".lora_b").value;  // out × r
        for (std::size_t o = 0; o < w.rows; ++o)
            for (std::size_t i = 0; i < w.cols; ++i) {
                T acc{0};
                for (std::size_t k = 0; k < a.rows; ++k) acc += b(o, k) * a(k, i);
                w(o, i) += s * acc;
            }
        params_.remove(target + ".lora_a");
        params_.remove(target + ".lora_b");
    }
    cfg_.lora.reset();
}

template class CocaModel<float>;
template class CocaModel<double>;

}  // namespace melreport
