#include "melreport/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

namespace melreport {

void TrainConfig::validate() const
{
    if (!(lr_max > 0.0)) throw ConfigError("train: lr_max must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must be in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be non-negative");
    if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (max_tiles_train == 0) throw ConfigError("train: max_tiles_train must be >= 1");
    if (loss_weights.contrastive < 0.0 || loss_weights.captioning < 0.0) throw ConfigError("train: loss weights must be non-negative");
    if (!(grad_clip > 0.0)) throw ConfigError("train: grad_clip must be positive");
    LoraConfig{lora_rank, lora_alpha}.validate();
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open config file " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t line_no = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string{};
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
        }
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

namespace {

double to_double(const std::string& key, const std::string& v)
{
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

std::size_t to_size(const std::string& key, const std::string& v)
{
    try {
        std::size_t pos = 0;
        if (!v.empty() && v.front() == '-') throw std::invalid_argument(v);
        const auto n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
}

}  // namespace

bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value)
{
    if (key == "lr_max") cfg.lr_max = to_double(key, value);
    else if (key == "beta1") cfg.beta1 = to_double(key, value);
    else if (key == "beta2") cfg.beta2 = to_double(key, value);
    else if (key == "adam_eps") cfg.adam_eps = to_double(key, value);
    else if (key == "weight_decay") cfg.weight_decay = to_double(key, value);
    else if (key == "warmup_steps") cfg.warmup_steps = to_size(key, value);
    else if (key == "epochs") cfg.epochs = to_size(key, value);
    else if (key == "batch_size") cfg.batch_size = to_size(key, value);
    else if (key == "max_tiles_train") cfg.max_tiles_train = to_size(key, value);
    else if (key == "seed") cfg.seed = to_size(key, value);
    else if (key == "con_weight") cfg.loss_weights.contrastive = to_double(key, value);
    else if (key == "cap_weight") cfg.loss_weights.captioning = to_double(key, value);
    else if (key == "mode") cfg.mode = parse_body_mode(value);
    else if (key == "grad_clip") cfg.grad_clip = to_double(key, value);
    else if (key == "lora_rank") cfg.lora_rank = to_size(key, value);
    else if (key == "lora_alpha") cfg.lora_alpha = to_double(key, value);
    else return false;
    return true;
}

bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value)
{
    auto& p = cfg.perceiver;
    auto& d = cfg.decoder;
    if (key == "model_dim") d.model_dim = to_size(key, value);
    else if (key == "latent_dim") p.latent_dim = d.image_dim = to_size(key, value);
    else if (key == "contrastive_dim") p.contrastive_dim = d.contrastive_dim = to_size(key, value);
    else if (key == "n_latents") p.n_latents_total = to_size(key, value);
    else if (key == "n_cross_blocks") p.n_cross_blocks = to_size(key, value);
    else if (key == "n_self_blocks") p.n_self_blocks_per_cross = to_size(key, value);
    else if (key == "perceiver_heads") p.n_heads = to_size(key, value);
    else if (key == "n_heads") d.n_heads = to_size(key, value);
    else if (key == "n_unimodal_layers") d.n_unimodal_layers = to_size(key, value);
    else if (key == "n_multimodal_layers") d.n_multimodal_layers = to_size(key, value);
    else if (key == "max_seq_len") d.max_seq_len = to_size(key, value);
    else if (key == "vocab_size") d.vocab_size = to_size(key, value);
    else if (key == "ff_mult") p.ff_mult = d.ff_mult = to_size(key, value);
    else return false;
    return true;
}

std::vector<std::string> train_config_keys()
{
    return {"lr_max",  "beta1",      "beta2",      "adam_eps", "weight_decay", "warmup_steps",
            "epochs",  "batch_size", "max_tiles_train", "seed", "con_weight", "cap_weight",
            "mode",    "grad_clip",  "lora_rank",  "lora_alpha"};
}

std::vector<std::string> model_config_keys()
{
    return {"model_dim",        "latent_dim",        "contrastive_dim",     "n_latents",   "n_cross_blocks",
            "n_self_blocks",    "perceiver_heads",   "n_heads",             "n_unimodal_layers",
            "n_multimodal_layers", "max_seq_len",    "vocab_size",          "ff_mult"};
}

double lr_at(std::size_t step, std::size_t total_steps, const TrainConfig& cfg)
{
    if (total_steps <= cfg.warmup_steps) {
        throw ConfigError("lr schedule: total_steps (" + std::to_string(total_steps) + ") must exceed warmup_steps (" +
                          std::to_string(cfg.warmup_steps) + ")");
    }
    if (step > total_steps) throw DomainError("lr schedule: step beyond total_steps");
    if (step <= cfg.warmup_steps) {
        if (cfg.warmup_steps == 0) return cfg.lr_max;
        return cfg.lr_max * (static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(total_steps - cfg.warmup_steps);
    return cfg.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
void adamw_step(Parameter<T>& p, AdamMoments<T>& mom, std::size_t step, double lr, const TrainConfig& cfg)
{
    if (!p.trainable) return;
    if (step == 0) throw ContractError("adamw_step: step counts from 1");
    const std::size_t n = p.value.size();
    if (p.grad.size() != n) throw ShapeError("adamw_step: gradient shape mismatch for " + p.name);
    if (mom.m.size() != n) {
        mom.m = Tensor<T>(p.value.rows, p.value.cols);
        mom.v = Tensor<T>(p.value.rows, p.value.cols);
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(p.grad.data[i]))) {
            throw NumericalError("non-finite gradient in parameter '" + p.name + "' at index " + std::to_string(i));
        }
    }
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t i = 0; i < n; ++i) {
        const double g = static_cast<double>(p.grad.data[i]);
        const double m = b1 * static_cast<double>(mom.m.data[i]) + (1.0 - b1) * g;
        const double v = b2 * static_cast<double>(mom.v.data[i]) + (1.0 - b2) * g * g;
        mom.m.data[i] = static_cast<T>(m);
        mom.v.data[i] = static_cast<T>(v);
        const double update = (m / c1) / (std::sqrt(v / c2) + cfg.adam_eps);
        p.value.data[i] = static_cast<T>(static_cast<double>(p.value.data[i]) * decay - lr * update);
    }
}

template void adamw_step(Parameter<float>&, AdamMoments<float>&, std::size_t, double, const TrainConfig&);
template void adamw_step(Parameter<double>&, AdamMoments<double>&, std::size_t, double, const TrainConfig&);

void AdamW::step(ParamStore<float>& params, double lr)
{
    ++t_;
    params.for_each([&](Parameter<float>& p) {
        if (p.trainable) adamw_step(p, moments_[p.name], t_, lr, cfg_);
    });
}

double clip_grad_norm(ParamStore<float>& params, double max_norm)
{
    double sq = 0.0;
    params.for_each([&](const Parameter<float>& p) {
        if (!p.trainable) return;
        for (float g : p.grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
    });
    const double norm = std::sqrt(sq);
    if (std::isfinite(norm) && norm > max_norm) {
        const auto s = static_cast<float>(max_norm / norm);
        params.for_each([&](Parameter<float>& p) {
            if (!p.trainable) return;
            for (float& g : p.grad.data) g *= s;
        });
    }
    return norm;
}

double TrainLog::best_val_loss() const
{
    if (epoch_val_loss.empty()) return std::numeric_limits<double>::quiet_NaN();
    return epoch_val_loss.at(best_epoch);
}

std::string TrainLog::steps_csv() const
{
    std::ostringstream os;
    os.precision(9);
    os << "step,total,con,cap,lr,tau\n";
    for (const auto& s : steps) os << s.step << ',' << s.total << ',' << s.con << ',' << s.cap << ',' << s.lr << ',' << s.tau << '\n';
    return os.str();
}

nlohmann::json TrainLog::summary() const
{
    nlohmann::json j;
    j["steps"] = steps.size();
    j["epoch_val_loss"] = epoch_val_loss;
    j["best_epoch"] = best_epoch;
    j["best_val_loss"] = epoch_val_loss.empty() ? nlohmann::json(nullptr) : nlohmann::json(best_val_loss());
    j["aborted"] = aborted;
    if (aborted) j["abort_reason"] = abort_reason;
    if (!steps.empty()) {
        j["final_step"] = {{"total", steps.back().total}, {"con", steps.back().con}, {"cap", steps.back().cap},
                           {"tau", steps.back().tau}};
    }
    return j;
}

std::vector<CaseExample<float>> make_examples(const Corpus& corpus, const std::vector<std::string>& case_ids,
                                              const Tokenizer& tokenizer, std::size_t max_seq_len)
{
    std::vector<CaseExample<float>> out;
    out.reserve(case_ids.size());
    for (const auto& id : case_ids) {
        const Case& c = corpus.find(id);
        CaseExample<float> ex;
        ex.tiles = c.all_tiles();
        ex.tokens = encode_truncated(tokenizer, c.report, max_seq_len);
        out.push_back(std::move(ex));
    }
    return out;
}

double validation_loss(CocaModel<float>& model, const std::vector<CaseExample<float>>& examples, const TrainConfig& cfg)
{
    if (examples.empty()) throw ContractError("validation_loss: no examples");
    double acc = 0.0;
    for (std::size_t start = 0; start < examples.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(examples.size(), start + cfg.batch_size);
        std::vector<const CaseExample<float>*> batch;
        for (std::size_t i = start; i < end; ++i) batch.push_back(&examples[i]);
        Graph<float> g(false);
        auto losses = model.batch_losses(g, batch, cfg.loss_weights);
        acc += static_cast<double>(losses.total.value().data[0]) * static_cast<double>(batch.size());
    }
    return acc / static_cast<double>(examples.size());
}

void prepare_for_mode(CocaModel<float>& model, const TrainConfig& cfg)
{
    if (cfg.mode == BodyMode::lora && !model.has_lora()) {
        model.apply_lora(LoraConfig{cfg.lora_rank, cfg.lora_alpha}, cfg.seed ^ 0x10AAULL);
    }
    model.apply_policy(TrainabilityPolicy{cfg.mode});
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c)
{
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                      static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

}  // namespace

TrainLog train(CocaModel<float>& model, const std::vector<CaseExample<float>>& train_set,
               const std::vector<CaseExample<float>>& val_set, const TrainConfig& cfg, const StepCallback& on_step)
{
    cfg.validate();
    if (train_set.empty()) throw ContractError("train: empty training split");
    if (val_set.empty()) throw ContractError("train: empty validation split");
    const std::size_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    (void)lr_at(0, total_steps, cfg);  // validates the schedule before any work

    TrainLog log;
    AdamW optim(cfg);
    ParamStore<float> best = model.params();
    double best_val = std::numeric_limits<double>::infinity();
    std::mt19937_64 order_rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;

    auto abort_with = [&](const std::string& why) {
        log.aborted = true;
        log.abort_reason = why;
        model.params() = best;
    };

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<CaseExample<float>> subsampled;
            subsampled.reserve(end - start);
            std::vector<const CaseExample<float>*> batch;
            for (std::size_t i = start; i < end; ++i) {
                const auto& ex = train_set[order[i]];
                if (ex.tiles.rows > cfg.max_tiles_train) {
                    subsampled.push_back({subsample_tiles(ex.tiles, cfg.max_tiles_train, mix_seed(cfg.seed, step, i)), ex.tokens});
                    batch.push_back(&subsampled.back());
                } else {
                    batch.push_back(&ex);
                }
            }
            ++step;
            const double lr = lr_at(step, total_steps, cfg);
            Graph<float> g;
            auto losses = model.batch_losses(g, batch, cfg.loss_weights);
            StepRecord rec{step, losses.total.value().data[0], losses.contrastive.value().data[0],
                           losses.captioning.value().data[0], lr, model.temperature()};
            if (!std::isfinite(rec.total)) {
                abort_with("non-finite loss at step " + std::to_string(step));
                return log;
            }
            model.params().zero_grad();
            g.backward(losses.total);
            clip_grad_norm(model.params(), cfg.grad_clip);
            try {
                optim.step(model.params(), lr);
            } catch (const NumericalError& e) {
                abort_with(std::string(e.what()) + " at step " + std::to_string(step));
                return log;
            }
            log.steps.push_back(rec);
            if (on_step) on_step(rec);
        }
        const double val = validation_loss(model, val_set, cfg);
        log.epoch_val_loss.push_back(val);
        if (!std::isfinite(val)) {
            abort_with("non-finite validation loss after epoch " + std::to_string(epoch));
            return log;
        }
        if (val < best_val) {
            best_val = val;
            log.best_epoch = epoch;
            best = model.params();
        }
    }
    model.params() = best;
    return log;
}

}  // namespace melreport
