#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "melreport/corpus.hpp"
#include "melreport/retrieval.hpp"
#include "melreport/trainer.hpp"

namespace melreport {

// Desk-scale recipe for the synthetic corpora: same optimizer and loss
// weights as the defaults, shorter schedule and smaller batches.
TrainConfig desk_train_config();

struct TrainedRun {
    CocaModel<float> model;
    Tokenizer tokenizer;
    TrainLog log;
};

// Tokenizer from the training reports, fresh model seeded by cfg.seed,
// prepared for cfg.mode, then trained on the train split and selected on val.
TrainedRun train_pipeline(const Corpus& corpus, const SplitAssignment& split, const ModelConfig& model_cfg,
                          const TrainConfig& cfg);

struct ModeResult {
    BodyMode mode = BodyMode::frozen;
    TrainLog log;
    std::vector<RetrievalReport> reports;  // i2t then t2i, evaluated on the test split
};

// Trains one model per mode from the same seed and evaluates retrieval on
// the test split.
std::vector<ModeResult> compare_modes(const Corpus& corpus, const SplitAssignment& split, const ModelConfig& model_cfg,
                                      const TrainConfig& cfg, const std::vector<BodyMode>& modes,
                                      std::size_t resamples = 1000);

// Markdown table: one row per mode and direction.
std::string comparison_table(const std::vector<ModeResult>& results);

}  // namespace melreport
