#include "melreport/pipeline.hpp"

#include <cstdio>
#include <sstream>

namespace melreport {

TrainConfig desk_train_config()
{
    TrainConfig cfg;
    cfg.lr_max = 1e-2;
    cfg.warmup_steps = 100;
    cfg.epochs = 100;
    cfg.batch_size = 16;
    return cfg;
}

TrainedRun train_pipeline(const Corpus& corpus, const SplitAssignment& split, const ModelConfig& model_cfg,
                          const TrainConfig& cfg)
{
    const auto train_ids = split.cases_in(Split::train);
    const auto val_ids = split.cases_in(Split::val);
    if (train_ids.empty() || val_ids.empty()) throw DataError("train and val splits must be non-empty");
    std::vector<std::string> reports;
    for (const auto& id : train_ids) reports.push_back(corpus.find(id).report);
    Tokenizer tok = Tokenizer::train(reports, model_cfg.decoder.vocab_size);
    ModelConfig mc = model_cfg;
    mc.decoder.vocab_size = tok.vocab_size();
    mc.perceiver.input_dim = corpus.feature_dim;
    CocaModel<float> model(mc, cfg.seed);
    prepare_for_mode(model, cfg);
    const auto train_set = make_examples(corpus, train_ids, tok, mc.decoder.max_seq_len);
    const auto val_set = make_examples(corpus, val_ids, tok, mc.decoder.max_seq_len);
    TrainLog log = train(model, train_set, val_set, cfg);
    return {std::move(model), std::move(tok), std::move(log)};
}

std::vector<ModeResult> compare_modes(const Corpus& corpus, const SplitAssignment& split, const ModelConfig& model_cfg,
                                      const TrainConfig& cfg, const std::vector<BodyMode>& modes, std::size_t resamples)
{
    const auto test_ids = split.cases_in(Split::test);
    if (test_ids.empty()) throw DataError("compare_modes: empty test split");
    std::vector<ModeResult> out;
    for (BodyMode mode : modes) {
        TrainConfig c = cfg;
        c.mode = mode;
        TrainedRun run = train_pipeline(corpus, split, model_cfg, c);
        const EmbeddingTable table = compute_embeddings(run.model, run.tokenizer, corpus, test_ids);
        ModeResult r{mode, std::move(run.log), {}};
        for (Direction d : {Direction::image_to_text, Direction::text_to_image}) {
            r.reports.push_back(evaluate_retrieval(table, d, Subset::all, {1, 5, 10}, resamples, cfg.seed));
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::string comparison_table(const std::vector<ModeResult>& results)
{
    std::ostringstream os;
    os << "| mode | direction | n | recall@1 | recall@5 | recall@10 | mean rank | median rank | best val loss |\n"
       << "|---|---|---|---|---|---|---|---|---|\n";
    char buf[256];
    for (const auto& r : results) {
        for (const auto& rep : r.reports) {
            std::snprintf(buf, sizeof buf,
                          "| %s | %s | %zu | %.3f [%.3f, %.3f] | %.3f [%.3f, %.3f] | %.3f [%.3f, %.3f] | %.2f [%.2f, %.2f] | %.1f | %.4f |\n",
                          to_string(r.mode).c_str(), to_string(rep.direction).c_str(), rep.n_queries, rep.recall_at(1),
                          rep.ci.recall[0].lo, rep.ci.recall[0].hi, rep.recall_at(5), rep.ci.recall[1].lo,
                          rep.ci.recall[1].hi, rep.recall_at(10), rep.ci.recall[2].lo, rep.ci.recall[2].hi,
                          rep.point.mean_rank, rep.ci.mean_rank.lo, rep.ci.mean_rank.hi, rep.point.median_rank,
                          r.log.best_val_loss());
            os << buf;
        }
    }
    return os.str();
}

}  // namespace melreport
