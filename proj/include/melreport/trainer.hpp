#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "melreport/corpus.hpp"
#include "melreport/model.hpp"
#include "melreport/tokenizer.hpp"

namespace melreport {

// Optimization recipe. Defaults are the full-scale values; desk-scale runs
// override lr/warmup/epochs/batch through the config file or flags.
struct TrainConfig {
    double lr_max = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 1e-6;
    std::size_t warmup_steps = 600;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    std::size_t max_tiles_train = 100000;
    std::uint64_t seed = 0;
    LossWeights loss_weights{1.0, 2.0};
    BodyMode mode = BodyMode::frozen;
    double grad_clip = 1.0;
    std::size_t lora_rank = 8;
    double lora_alpha = 16.0;

    void validate() const;
};

// Flat key=value config files. Blank lines and '#' comments are ignored.
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

// Apply one key; returns false when the key is not a TrainConfig field.
bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value);
bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> train_config_keys();
std::vector<std::string> model_config_keys();

// Linear warmup 0 → lr_max over warmup_steps, then half-cosine from lr_max
// to 0 over the remaining total_steps − warmup_steps.
double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

template <class T>
struct AdamMoments {
    Tensor<T> m;
    Tensor<T> v;
};

// One bias-corrected AdamW update with decoupled weight decay
// (p ← p − lr·wd·p − lr·m̂/(√v̂ + ε)). Frozen parameters are left untouched.
// `step` counts from 1. Throws NumericalError on a non-finite gradient.
template <class T>
void adamw_step(Parameter<T>& p, AdamMoments<T>& moments, std::size_t step, double lr, const TrainConfig& cfg);

class AdamW {
public:
    explicit AdamW(TrainConfig cfg) : cfg_(std::move(cfg)) {}
    void step(ParamStore<float>& params, double lr);
    [[nodiscard]] std::size_t steps_taken() const noexcept { return t_; }

private:
    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, AdamMoments<float>> moments_;
};

// Scales all trainable gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(ParamStore<float>& params, double max_norm);

struct StepRecord {
    std::size_t step = 0;
    double total = 0, con = 0, cap = 0, lr = 0, tau = 0;
    bool operator==(const StepRecord&) const = default;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<double> epoch_val_loss;
    std::size_t best_epoch = 0;
    bool aborted = false;
    std::string abort_reason;

    [[nodiscard]] double best_val_loss() const;
    [[nodiscard]] std::string steps_csv() const;
    [[nodiscard]] nlohmann::json summary() const;
    bool operator==(const TrainLog&) const = default;
};

// Tokenized examples for a list of cases. Sequences longer than
// max_seq_len + 1 are cut and re-terminated with EOS.
std::vector<CaseExample<float>> make_examples(const Corpus& corpus, const std::vector<std::string>& case_ids,
                                              const Tokenizer& tokenizer, std::size_t max_seq_len);

// Weighted total loss over examples in consecutive batches of batch_size,
// no tile limit, averaged per example.
double validation_loss(CocaModel<float>& model, const std::vector<CaseExample<float>>& examples,
                       const TrainConfig& cfg);

using StepCallback = std::function<void(const StepRecord&)>;

// Epoch loop: seeded shuffle, tile subsampling, forward, weighted loss,
// backward, clipping, AdamW. After each epoch the validation loss is
// computed; on return the model holds the parameters of the best epoch.
// A non-finite loss or gradient stops training, restores the best epoch so
// far and marks the log as aborted.
TrainLog train(CocaModel<float>& model, const std::vector<CaseExample<float>>& train_set,
               const std::vector<CaseExample<float>>& val_set, const TrainConfig& cfg, const StepCallback& on_step = {});

// Attaches adapters (lora mode) and sets trainability flags for cfg.mode.
void prepare_for_mode(CocaModel<float>& model, const TrainConfig& cfg);

}  // namespace melreport
