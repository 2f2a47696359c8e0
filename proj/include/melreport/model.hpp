#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "melreport/decoder.hpp"
#include "melreport/losses.hpp"
#include "melreport/perceiver.hpp"

namespace melreport {

enum class BodyMode { frozen, full, lora };

std::string to_string(BodyMode mode);
BodyMode parse_body_mode(std::string_view text);

enum class ParamGroup {
    perceiver,
    contrastive_head,  // image projection and temperature
    word_embeddings,
    attention_pool,
    cross_attention,
    unimodal_body,
    multimodal_body,
    lora_adapter,
};

ParamGroup param_group(std::string_view name);
std::string to_string(ParamGroup group);

// Which parameter groups receive updates. Everything except the language
// bodies always trains; the unimodal body follows `unimodal_body`, the
// multimodal body stays frozen.
struct TrainabilityPolicy {
    BodyMode unimodal_body = BodyMode::frozen;

    [[nodiscard]] bool is_trainable(ParamGroup group) const;
};

struct ModelConfig {
    PerceiverConfig perceiver;
    DecoderConfig decoder;
    std::optional<LoraConfig> lora;  // set while adapters are attached

    void validate() const;

    // Desk-scale defaults: 32-wide, 17 latents, 2+2 decoder layers.
    static ModelConfig desk(std::size_t feature_dim, std::size_t vocab_size);
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// One training example: the tiles of all slides of a case and the full
// token sequence of its report (BOS ... EOS).
template <class T>
struct CaseExample {
    Tensor<T> tiles;
    std::vector<std::int32_t> tokens;
};

template <class T>
struct BatchLosses {
    Var<T> contrastive;
    Var<T> captioning;
    Var<T> total;
};

template <class T>
class CocaModel {
public:
    CocaModel(ModelConfig cfg, std::uint64_t seed);
    CocaModel(ModelConfig cfg, ParamStore<T> params);

    [[nodiscard]] const ModelConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] ParamStore<T>& params() noexcept { return params_; }
    [[nodiscard]] const ParamStore<T>& params() const noexcept { return params_; }
    [[nodiscard]] const Perceiver<T>& perceiver() const noexcept { return perceiver_; }
    [[nodiscard]] const TextDecoder<T>& decoder() const noexcept { return decoder_; }

    LayerContext<T> context(Graph<T>& g);

    // contrastive_raw (1×latent_dim) → 1×contrastive_dim
    Var<T> image_projection(LayerContext<T>& ctx, Var<T> contrastive_raw);
    Var<T> log_inv_tau(LayerContext<T>& ctx);
    [[nodiscard]] double temperature() const;

    // Teacher-forced forward of a batch and both objectives. The contrastive
    // matrix spans the whole batch.
    BatchLosses<T> batch_losses(Graph<T>& g, const std::vector<const CaseExample<T>*>& batch,
                                const LossWeights& weights = {});

    // Inference on detached graphs.
    CaseEmbedding<T> embed_image(const Tensor<T>& tiles);
    std::vector<T> image_embedding(const Tensor<T>& tiles);             // L2-normalized
    std::vector<T> text_embedding(std::span<const std::int32_t> tokens);  // L2-normalized
    std::vector<T> image_embedding(const CaseEmbedding<T>& emb);
    Tensor<T> logits(const CaseEmbedding<T>& emb, std::span<const std::int32_t> tokens);

    void apply_policy(const TrainabilityPolicy& policy);

    // W_eff = W + (alpha/r)·B·A on the unimodal query/value projections;
    // A random, B zero, so a fresh adapter leaves outputs unchanged.
    void apply_lora(const LoraConfig& lora, std::uint64_t seed);
    void merge_lora();
    [[nodiscard]] bool has_lora() const noexcept { return cfg_.lora.has_value(); }

    template <class U>
    [[nodiscard]] CocaModel<U> cast() const
    {
        return CocaModel<U>(cfg_, params_.template cast<U>());
    }

private:
    ModelConfig cfg_;
    Perceiver<T> perceiver_;
    TextDecoder<T> decoder_;
    ParamStore<T> params_;
};

// Text-side input for contrastive embedding: the sequence without its final
// EOS, matching what the decoder sees under teacher forcing.
std::span<const std::int32_t> text_input(std::span<const std::int32_t> tokens);

}  // namespace melreport
