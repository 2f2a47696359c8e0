#include <doctest.h>

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "helpers.hpp"
#include "melreport/cli.hpp"
#include "melreport/retrieval.hpp"
#include "melreport/trainer.hpp"

using namespace melreport;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result call(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

std::string flag(std::string key)
{
    if (key == "max_tiles_train") return "--max-tiles";
    for (char& c : key)
        if (c == '_') c = '-';
    return "--" + key;
}

}  // namespace

TEST_CASE("cli usage errors exit 1; missing files exit 2")
{
    CHECK(call({}).code == cli::kExitUsage);
    CHECK(call({"frobnicate"}).code == cli::kExitUsage);
    CHECK(call({"synth", "--out", "x", "--bogus"}).code == cli::kExitUsage);
    CHECK(call({"synth"}).code == cli::kExitUsage);

    const auto dir = testutil::temp_dir("cli_err");
    const auto r = call({"train", "--config", (dir / "missing.cfg").string(), "--data", dir.string(), "--out", (dir / "o").string()});
    CHECK(r.code == cli::kExitData);
    CHECK(r.err.find("missing.cfg") != std::string::npos);
    CHECK(call({"eval-retrieval", "--embeddings", (dir / "none.bin").string()}).code == cli::kExitData);
    CHECK(call({"eval-retrieval", "--embeddings", "x", "--direction", "sideways"}).code == cli::kExitUsage);
}

TEST_CASE("every subcommand documents its flags")
{
    const std::map<std::string, std::vector<std::string>> expected{
        {"synth", {"--cases", "--seed", "--out", "--attributes", "--noise", "--feature-dim"}},
        {"tessellate", {"--tissue", "--pen", "--mpp", "--tile-px", "--coverage-min", "--out"}},
        {"split", {"--data", "--seed", "--out", "--train", "--val", "--test"}},
        {"train", {"--config", "--data", "--split", "--out"}},
        {"generate", {"--checkpoint", "--data", "--which", "--strategy", "--max-len", "--temperature", "--beam-width", "--seed"}},
        {"embed", {"--checkpoint", "--data", "--which", "--out"}},
        {"eval-retrieval", {"--embeddings", "--direction", "--subset", "--k", "--resamples", "--seed", "--csv"}},
        {"grad-check", {"--component", "--precision", "--seed"}},
    };
    CHECK(cli::subcommands().size() == expected.size());
    for (const auto& name : cli::subcommands()) {
        REQUIRE(expected.contains(name));
        const auto r = call({name, "--help"});
        CHECK(r.code == cli::kExitOk);
        for (const auto& f : expected.at(name)) CHECK_MESSAGE(r.out.find(f) != std::string::npos, name << " " << f);
        if (name == "train") {
            for (const auto& k : train_config_keys()) CHECK_MESSAGE(r.out.find(flag(k)) != std::string::npos, k);
            for (const auto& k : model_config_keys()) CHECK_MESSAGE(r.out.find(flag(k)) != std::string::npos, k);
        }
    }
}

TEST_CASE("end to end: synth, split, train, generate, embed, eval-retrieval")
{
    const auto dir = testutil::temp_dir("cli_e2e");
    const auto data = (dir / "data").string();
    REQUIRE(call({"synth", "--cases", "12", "--seed", "5", "--out", data, "--feature-dim", "8", "--min-tiles", "3",
                  "--max-case-tiles", "6"}).code == 0);
    const std::string manifest = slurp(dir / "data" / "manifest.json");
    REQUIRE(call({"synth", "--cases", "12", "--seed", "5", "--out", (dir / "data2").string(), "--feature-dim", "8",
                  "--min-tiles", "3", "--max-case-tiles", "6"}).code == 0);
    CHECK(slurp(dir / "data2" / "manifest.json") == manifest);

    REQUIRE(call({"split", "--data", data, "--seed", "1", "--out", (dir / "split.json").string()}).code == 0);

    const std::vector<std::string> train_args{"train", "--data", data, "--split", (dir / "split.json").string(), "--epochs", "2",
                                              "--warmup-steps", "1", "--model-dim", "16", "--latent-dim", "16", "--n-heads", "2",
                                              "--perceiver-heads", "2", "--n-latents", "4", "--contrastive-dim", "8", "--seed", "3"};
    auto a = train_args, b = train_args;
    a.insert(a.end(), {"--out", (dir / "runA").string()});
    b.insert(b.end(), {"--out", (dir / "runB").string()});
    const auto ta = call(a);
    REQUIRE_MESSAGE(ta.code == 0, ta.err);
    REQUIRE(call(b).code == 0);
    CHECK(slurp(dir / "runA" / "checkpoint.bin") == slurp(dir / "runB" / "checkpoint.bin"));
    CHECK(slurp(dir / "runA" / "train_log.csv") == slurp(dir / "runB" / "train_log.csv"));
    CHECK(nlohmann::json::parse(slurp(dir / "runA" / "train_summary.json")).contains("best_val_loss"));

    const auto ckpt = (dir / "runA" / "checkpoint.bin").string();
    const auto gen = call({"generate", "--checkpoint", ckpt, "--data", data, "--split", (dir / "split.json").string(),
                           "--which", "test", "--max-len", "8"});
    REQUIRE_MESSAGE(gen.code == 0, gen.err);
    std::istringstream lines(gen.out);
    std::string line;
    std::size_t count = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("case_id"));
        CHECK(j.contains("report"));
        CHECK(j.contains("truncated"));
        CHECK(j.contains("repeated_ngrams"));
        ++count;
    }
    CHECK(count >= 1);

    const auto emb = (dir / "emb.bin").string();
    REQUIRE(call({"embed", "--checkpoint", ckpt, "--data", data, "--out", emb}).code == 0);
    const auto ev = call({"eval-retrieval", "--embeddings", emb, "--k", "1,5", "--resamples", "50", "--seed", "2"});
    REQUIRE_MESSAGE(ev.code == 0, ev.err);
    const auto j = nlohmann::json::parse(ev.out);
    for (const char* key : {"recall@1", "recall@1_ci", "recall@5", "recall@5_ci", "mean_rank", "mean_rank_ci", "median_rank",
                            "median_rank_ci"})
        CHECK_MESSAGE(j.contains(key), key);
    const auto lib = evaluate_retrieval(load_embeddings(emb), Direction::image_to_text, Subset::all, {1, 5}, 50, 2);
    CHECK(j.at("recall@1").get<double>() == lib.recall_at(1));
    CHECK(j.at("mean_rank").get<double>() == lib.point.mean_rank);
    CHECK(call({"eval-retrieval", "--embeddings", emb, "--k", "1,5", "--resamples", "50", "--seed", "2"}).out == ev.out);
}

TEST_CASE("grad-check subcommand passes")
{
    const auto r = call({"grad-check", "--precision", "f64"});
    CHECK_MESSAGE(r.code == 0, r.out << r.err);
}
