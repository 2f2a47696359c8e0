#include "melreport/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "melreport/checkpoint.hpp"
#include "melreport/corpus.hpp"
#include "melreport/generation.hpp"
#include "melreport/gradcheck_suite.hpp"
#include "melreport/parallel.hpp"
#include "melreport/pipeline.hpp"
#include "melreport/retrieval.hpp"
#include "melreport/synth.hpp"
#include "melreport/tessellation.hpp"

namespace melreport::cli {

namespace fs = std::filesystem;

std::vector<std::string> subcommands()
{
    return {"synth", "tessellate", "split", "train", "generate", "embed", "eval-retrieval", "grad-check"};
}

namespace {

struct NumericalAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string flag_for_key(const std::string& key)
{
    if (key == "max_tiles_train") return "--max-tiles";
    std::string f = "--" + key;
    std::replace(f.begin(), f.end(), '_', '-');
    return f;
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write " + path.string());
    os << text;
}

// Output to a file when a path is given, else to `out`.
void emit(const std::string& path, const std::string& text, std::ostream& out)
{
    if (path.empty()) out << text;
    else write_text(path, text);
}

std::vector<std::size_t> parse_k_list(const std::string& text)
{
    std::vector<std::size_t> ks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            const long v = std::stol(item, &pos);
            if (pos != item.size() || v < 1) throw std::invalid_argument(item);
            ks.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("--k: expected comma-separated positive integers, got '" + text + "'");
        }
    }
    if (ks.empty()) throw ConfigError("--k: empty list");
    return ks;
}

std::vector<std::string> select_cases(const Corpus& corpus, const std::string& split_path, const std::string& which)
{
    if (which == "all" || split_path.empty()) {
        if (which != "all") throw ConfigError("--which " + which + " needs --split");
        std::vector<std::string> ids;
        for (const auto& c : corpus.cases) ids.push_back(c.case_id);
        return ids;
    }
    return read_split(split_path).cases_in(parse_split(which));
}

struct TrainArgs {
    std::string config;
    std::string data;
    std::string split;
    std::string out;
    std::map<std::string, std::string> overrides;  // config key -> flag value
};

struct ResolvedTraining {
    TrainConfig train;
    ModelConfig model;
};

ResolvedTraining resolve_training(const TrainArgs& a, std::size_t feature_dim)
{
    ResolvedTraining r{desk_train_config(), ModelConfig::desk(feature_dim, 512)};
    std::map<std::string, std::string> kv;
    if (!a.config.empty()) kv = read_config_file(a.config);
    for (const auto& [k, v] : a.overrides) kv[k] = v;
    for (const auto& [k, v] : kv) {
        if (!apply_train_key(r.train, k, v) && !apply_model_key(r.model, k, v)) {
            throw ConfigError("unknown config key '" + k + "'");
        }
    }
    r.train.validate();
    return r;
}

int cmd_synth(std::size_t cases, std::uint64_t seed, const std::string& out_dir, SynthSpec spec, std::ostream& out)
{
    spec.n_cases = cases;
    const SynthCorpus sc = synth_generate(spec, seed);
    write_corpus(out_dir, sc.corpus);
    nlohmann::json attrs = nlohmann::json::array();
    for (std::size_t i = 0; i < sc.corpus.cases.size(); ++i) {
        attrs.push_back({{"case_id", sc.corpus.cases[i].case_id},
                         {"subtype", to_string(sc.attributes[i].subtype)},
                         {"active", sc.attributes[i].active}});
    }
    write_text(fs::path(out_dir) / "attributes.json", attrs.dump(1) + "\n");
    out << "wrote " << sc.corpus.cases.size() << " cases to " << out_dir << "\n";
    return kExitOk;
}

int cmd_tessellate(const std::string& tissue, const std::string& pen, double mpp, const std::string& slide_id,
                   std::size_t tile_px, double coverage_min, const std::string& out_path, std::ostream& out)
{
    MaskPair masks;
    masks.tissue = read_pgm(tissue);
    if (!pen.empty()) masks.pen = read_pgm(pen);
    else masks.pen = Mask(masks.tissue.height, masks.tissue.width);
    masks.native_mpp = mpp;
    masks.validate();
    const auto tiles = compute_tile_grid(masks, tile_px, coverage_min);
    const std::string id = slide_id.empty() ? fs::path(tissue).stem().string() : slide_id;
    emit(out_path, tiles_to_csv(id, tiles), out);
    return kExitOk;
}

int cmd_split(const std::string& data, std::uint64_t seed, const std::string& out_path, SplitRatios ratios, std::ostream& out)
{
    const Corpus corpus = load_corpus(data);
    const SplitAssignment s = split_by_patient(corpus, ratios, seed);
    if (out_path.empty()) throw ConfigError("split: --out is required");
    write_split(out_path, s);
    out << "train " << s.cases_in(Split::train).size() << ", val " << s.cases_in(Split::val).size() << ", test "
        << s.cases_in(Split::test).size() << "\n";
    return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out)
{
    ResolvedTraining r = resolve_training(a, 1);
    const Corpus corpus = load_corpus(a.data);
    r.model.perceiver.input_dim = corpus.feature_dim;
    const fs::path out_dir = a.out;
    fs::create_directories(out_dir);
    SplitAssignment split;
    if (!a.split.empty()) {
        split = read_split(a.split);
    } else {
        split = split_by_patient(corpus, {}, r.train.seed);
        write_split(out_dir / "split.json", split);
    }
    TrainedRun run = train_pipeline(corpus, split, r.model, r.train);
    nlohmann::json extra;
    extra["train_summary"] = run.log.summary();
    save_checkpoint(out_dir / "checkpoint.bin", run.model, run.tokenizer, extra);
    write_text(out_dir / "train_log.csv", run.log.steps_csv());
    write_text(out_dir / "train_summary.json", run.log.summary().dump(2) + "\n");
    if (run.log.aborted) throw NumericalAbort("training aborted: " + run.log.abort_reason + " (best checkpoint kept)");
    out << "best epoch " << run.log.best_epoch << ", val loss " << run.log.best_val_loss() << "; checkpoint "
        << (out_dir / "checkpoint.bin").string() << "\n";
    return kExitOk;
}

int cmd_generate(const std::string& data, const std::string& checkpoint, const std::string& split, const std::string& which,
                 DecodeOptions opts, std::size_t ngram, const std::string& out_path, std::ostream& out)
{
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    const Corpus corpus = load_corpus(data, ck.model.config().perceiver.input_dim);
    const auto ids = select_cases(corpus, split, which);
    std::vector<std::string> lines(ids.size());
    parallel_for(ids.size(), [&](std::size_t i) {
        DecodeOptions o = opts;
        o.seed = opts.seed + i;
        const auto emb = ck.model.embed_image(corpus.find(ids[i]).all_tiles());
        const GeneratedReport g = generate(ck.model, emb, ck.tokenizer, o);
        nlohmann::json j{{"case_id", ids[i]},
                         {"report", g.text},
                         {"truncated", g.truncated},
                         {"repeated_ngrams", detect_repetitions(g.text, ngram)}};
        lines[i] = j.dump() + "\n";
    });
    std::string text;
    for (const auto& l : lines) text += l;
    emit(out_path, text, out);
    return kExitOk;
}

int cmd_embed(const std::string& data, const std::string& checkpoint, const std::string& split, const std::string& which,
              const std::string& out_path, std::ostream& out)
{
    if (out_path.empty()) throw ConfigError("embed: --out is required");
    LoadedCheckpoint ck = load_checkpoint(checkpoint);
    const Corpus corpus = load_corpus(data, ck.model.config().perceiver.input_dim);
    const EmbeddingTable t = compute_embeddings(ck.model, ck.tokenizer, corpus, select_cases(corpus, split, which));
    save_embeddings(out_path, t);
    out << "wrote " << t.size() << " embeddings to " << out_path << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& embeddings, const std::string& direction, const std::string& subset, const std::string& k,
             std::size_t resamples, std::uint64_t seed, const std::string& out_path, const std::string& csv_path,
             std::ostream& out)
{
    const Direction d = parse_direction(direction);
    const Subset s = parse_subset(subset);
    const auto ks = parse_k_list(k);
    const EmbeddingTable t = load_embeddings(embeddings);
    const RetrievalReport rep = evaluate_retrieval(t, d, s, ks, resamples, seed);
    emit(out_path, to_json(rep).dump(2) + "\n", out);
    if (!csv_path.empty()) write_text(csv_path, reports_csv({rep}));
    return kExitOk;
}

int cmd_grad_check(const std::string& component, const std::string& precision, std::uint64_t seed, std::ostream& out)
{
    if (precision != "f32" && precision != "f64") throw ConfigError("--precision must be f32 or f64");
    const Precision p = precision == "f32" ? Precision::f32 : Precision::f64;
    std::vector<CheckedComponent> comps =
        component == "all" ? all_checked_components() : std::vector{parse_checked_component(component)};
    bool ok = true;
    for (auto c : comps) {
        const GradCheckReport r = check_component(c, p, seed);
        out << (r.passed ? "ok   " : "FAIL ") << to_string(c) << " max_rel_err=" << r.max_rel_err << " tol=" << r.tolerance
            << " worst=" << r.worst_param << "[" << r.worst_index << "] coords=" << r.coords_checked << "\n";
        ok = ok && r.passed;
    }
    if (!ok) throw NumericalAbort("gradient check failed");
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Slide-level report generation and retrieval toolkit", "melreport"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus (manifest + feature files)");
    std::size_t n_cases = 64;
    std::uint64_t seed = 0;
    std::string out_path;
    SynthSpec spec;
    synth->add_option("--cases", n_cases, "Number of cases")->capture_default_str();
    synth->add_option("--seed", seed, "Random seed")->capture_default_str();
    synth->add_option("--out", out_path, "Output corpus directory")->required();
    synth->add_option("--attributes", spec.n_attributes, "Binary visual attributes (4..8)")->capture_default_str();
    synth->add_option("--common-fraction", spec.common_fraction, "Fraction of common nevi")->capture_default_str();
    synth->add_option("--noise", spec.noise_scale, "Tile noise scale")->capture_default_str();
    synth->add_option("--feature-dim", spec.feature_dim, "Tile feature dimension")->capture_default_str();
    synth->add_option("--min-tiles", spec.min_tiles, "Minimum tiles per case")->capture_default_str();
    synth->add_option("--max-case-tiles", spec.max_tiles, "Maximum tiles per case")->capture_default_str();
    synth->add_option("--max-slides", spec.max_slides, "Maximum slides per case")->capture_default_str();
    synth->add_option("--repeat-patient", spec.repeat_patient_prob, "Probability a case reuses a patient")->capture_default_str();
    synth->add_option("--grammar-seed", spec.grammar_seed, "Report phrasing variant seed")->capture_default_str();

    // tessellate
    auto* tess = app.add_subcommand("tessellate", "Compute the retained tile grid of one slide from its masks");
    std::string tissue, pen, slide_id;
    double mpp = 0.5, coverage_min = kCoverageMin;
    std::size_t tile_px = kTilePx;
    tess->add_option("--tissue", tissue, "Tissue mask (binary PGM, 1/16 of the 20x grid)")->required();
    tess->add_option("--pen", pen, "Pen-mark mask (binary PGM, same size); default none");
    tess->add_option("--mpp", mpp, "Native microns per pixel of the scan")->capture_default_str();
    tess->add_option("--slide-id", slide_id, "Slide id in the CSV (default: tissue file stem)");
    tess->add_option("--tile-px", tile_px, "Tile size in pixels at 20x")->capture_default_str();
    tess->add_option("--coverage-min", coverage_min, "Minimum tissue coverage")->capture_default_str();
    tess->add_option("--out", out_path, "Output CSV (default: stdout)");

    // split
    auto* split = app.add_subcommand("split", "Patient-level train/val/test split");
    std::string data;
    SplitRatios ratios;
    split->add_option("--data", data, "Corpus directory")->required();
    split->add_option("--seed", seed, "Random seed")->capture_default_str();
    split->add_option("--out", out_path, "Output split JSON")->required();
    split->add_option("--train", ratios.train, "Train fraction")->capture_default_str();
    split->add_option("--val", ratios.val, "Validation fraction")->capture_default_str();
    split->add_option("--test", ratios.test, "Test fraction")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint.bin, train_log.csv, train_summary.json");
    TrainArgs targs;
    train_cmd->add_option("--config", targs.config, "key=value config file; flags override it");
    train_cmd->add_option("--data", targs.data, "Corpus directory")->required();
    train_cmd->add_option("--split", targs.split, "Split JSON (default: computed from --seed, saved to OUT/split.json)");
    train_cmd->add_option("--out", targs.out, "Output directory")->required();
    std::map<std::string, std::string> flag_values;
    auto add_key_flags = [&](const std::vector<std::string>& keys, const std::string& what) {
        for (const auto& k : keys) train_cmd->add_option(flag_for_key(k), flag_values[k], what + " key " + k);
    };
    add_key_flags(train_config_keys(), "training config");
    add_key_flags(model_config_keys(), "model config");

    // generate
    auto* gen = app.add_subcommand("generate", "Generate reports; JSON lines {case_id, report, truncated, repeated_ngrams}");
    std::string checkpoint, split_path, which = "all", strategy = "greedy";
    DecodeOptions dopts;
    std::size_t ngram = 5;
    gen->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    gen->add_option("--data", data, "Corpus directory")->required();
    gen->add_option("--split", split_path, "Split JSON");
    gen->add_option("--which", which, "Cases: all, train, val or test")->capture_default_str();
    gen->add_option("--strategy", strategy, "greedy, sample or beam")->capture_default_str();
    gen->add_option("--max-len", dopts.max_len, "Maximum generated tokens")->capture_default_str();
    gen->add_option("--temperature", dopts.temperature, "Sampling temperature")->capture_default_str();
    gen->add_option("--beam-width", dopts.beam_width, "Beam width (1..4)")->capture_default_str();
    gen->add_option("--seed", seed, "Sampling seed (case i uses seed + i)")->capture_default_str();
    gen->add_option("--ngram", ngram, "n for repeated n-gram counting")->capture_default_str();
    gen->add_option("--out", out_path, "Output JSONL (default: stdout)");

    // embed
    auto* embed = app.add_subcommand("embed", "Export normalized image/text embeddings of a case set");
    embed->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    embed->add_option("--data", data, "Corpus directory")->required();
    embed->add_option("--split", split_path, "Split JSON");
    embed->add_option("--which", which, "Cases: all, train, val or test")->capture_default_str();
    embed->add_option("--out", out_path, "Output embedding table")->required();

    // eval-retrieval
    auto* eval = app.add_subcommand("eval-retrieval", "Retrieval metrics with percentile bootstrap CIs (JSON)");
    std::string embeddings, direction = "i2t", subset = "all", k_list = "1,5,10", csv_path;
    std::size_t resamples = 1000;
    eval->add_option("--embeddings", embeddings, "Embedding table file")->required();
    eval->add_option("--direction", direction, "i2t or t2i")->capture_default_str();
    eval->add_option("--subset", subset, "all, common or other")->capture_default_str();
    eval->add_option("--k", k_list, "Comma-separated recall cutoffs")->capture_default_str();
    eval->add_option("--resamples", resamples, "Bootstrap resamples")->capture_default_str();
    eval->add_option("--seed", seed, "Bootstrap seed")->capture_default_str();
    eval->add_option("--out", out_path, "Output JSON (default: stdout)");
    eval->add_option("--csv", csv_path, "Also write CSV here");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks on tiny configs");
    std::string component = "all", precision = "f64";
    gc->add_option("--component", component, "all or one of: contrastive, captioning, attention_pool, perceiver_block, unimodal_block, multimodal_block")
        ->capture_default_str();
    gc->add_option("--precision", precision, "f32 or f64")->capture_default_str();
    gc->add_option("--seed", seed, "Random seed")->capture_default_str();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*synth) return cmd_synth(n_cases, seed, out_path, spec, out);
        if (*tess) return cmd_tessellate(tissue, pen, mpp, slide_id, tile_px, coverage_min, out_path, out);
        if (*split) return cmd_split(data, seed, out_path, ratios, out);
        if (*train_cmd) {
            for (const auto& [k, v] : flag_values) {
                if (train_cmd->count(flag_for_key(k)) > 0) targs.overrides[k] = v;
            }
            return cmd_train(targs, out);
        }
        if (*gen) {
            dopts.strategy = parse_decode_strategy(strategy);
            dopts.seed = seed;
            return cmd_generate(data, checkpoint, split_path, which, dopts, ngram, out_path, out);
        }
        if (*embed) return cmd_embed(data, checkpoint, split_path, which, out_path, out);
        if (*eval) return cmd_eval(embeddings, direction, subset, k_list, resamples, seed, out_path, csv_path, out);
        if (*gc) return cmd_grad_check(component, precision, seed, out);
    } catch (const NumericalAbort& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const DomainError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace melreport::cli
