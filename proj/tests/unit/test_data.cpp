#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "melreport/corpus.hpp"
#include "melreport/synth.hpp"
#include "melreport/tokenizer.hpp"

using namespace melreport;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

Corpus patients_corpus(const std::vector<std::pair<std::string, int>>& patient_cases)
{
    Corpus c;
    c.feature_dim = 2;
    int k = 0;
    for (const auto& [pid, n] : patient_cases) {
        for (int i = 0; i < n; ++i) {
            Case cs;
            char id[16];
            std::snprintf(id, sizeof id, "C%04d", k++);
            cs.case_id = id;
            cs.patient_id = pid;
            cs.report = "r";
            cs.slides.push_back({cs.case_id + "_S1", Tensor<float>(1, 2, 1.0f), {}});
            c.cases.push_back(cs);
        }
    }
    return c;
}

}  // namespace

TEST_CASE("empty manifest loads as an empty corpus")
{
    auto dir = testutil::temp_dir("empty_manifest");
    std::ofstream(dir / kManifestName).close();
    const Corpus c = load_corpus(dir);
    CHECK(c.cases.empty());
}

TEST_CASE("feature file round trip is byte exact")
{
    auto dir = testutil::temp_dir("feature_rt");
    fs::create_directories(dir / "features");
    TileFeatureSet s;
    s.slide_id = "C0001_S1";
    s.features = Tensor<float>(10, 32);
    for (std::size_t i = 0; i < s.features.data.size(); ++i) s.features.data[i] = static_cast<float>(i) * 0.25f - 7.0f;
    for (int i = 0; i < 10; ++i) s.coords.push_back({i, 2 * i});
    write_feature_file(dir / "features" / "C0001_S1.pft", s);

    // Independent reference encoding of the header.
    const std::string bytes = slurp(dir / "features" / "C0001_S1.pft");
    REQUIRE(bytes.size() == 8 + 4 * 3 + 1 + 10 * 2 * 4 + 10 * 32 * 4);
    CHECK(bytes.substr(0, 8) == "PATHFT01");
    CHECK(static_cast<unsigned char>(bytes[12]) == 10);
    CHECK(static_cast<unsigned char>(bytes[16]) == 32);
    CHECK(bytes[20] == 1);

    std::ofstream(dir / kManifestName)
        << R"({"case_id":"C0001","patient_id":"P1","diagnosis_group":"common_nevus","report":"x","feature_files":["features/C0001_S1.pft"]})"
        << "\n";
    const Corpus c = load_corpus(dir, 32);
    REQUIRE(c.cases.size() == 1);
    CHECK(c.cases[0].slides[0].features.rows == 10);
    CHECK(c.cases[0].slides[0].features.cols == 32);
    CHECK(c.cases[0].slides[0].features == s.features);
    CHECK(c.cases[0].slides[0].coords == s.coords);
}

TEST_CASE("feature dimension mismatch is a schema error")
{
    auto dir = testutil::temp_dir("dim_mismatch");
    fs::create_directories(dir / "features");
    write_feature_file(dir / "features" / "A_S1.pft", {"A_S1", Tensor<float>(3, 16), {}});
    std::ofstream(dir / kManifestName)
        << R"({"case_id":"A","patient_id":"P","diagnosis_group":"other","report":"x","feature_files":["features/A_S1.pft"]})"
        << "\n";
    std::ofstream(dir / kCorpusInfoName) << R"({"feature_dim":32,"n_cases":1})";
    CHECK_THROWS_AS(load_corpus(dir), SchemaError);
}

TEST_CASE("missing feature file is a data error naming the case")
{
    auto dir = testutil::temp_dir("missing_feature");
    std::ofstream(dir / kManifestName)
        << R"({"case_id":"C0042","patient_id":"P","diagnosis_group":"other","report":"x","feature_files":["features/nope.pft"]})"
        << "\n";
    try {
        (void)load_corpus(dir, 4);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("C0042") != std::string::npos);
    }
}

TEST_CASE("one patient with three cases lands in one split")
{
    Corpus c = patients_corpus({{"P1", 3}});
    SplitAssignment s = split_by_patient(c, {1.0, 0.0, 0.0}, 0);
    CHECK(s.cases_in(Split::train).size() == 3);
}

TEST_CASE("ten patients split 8/1/1")
{
    std::vector<std::pair<std::string, int>> pc;
    for (int i = 0; i < 10; ++i) pc.push_back({"P" + std::to_string(i), 1 + i % 3});
    Corpus c = patients_corpus(pc);
    SplitAssignment s = split_by_patient(c, {}, 5);
    std::map<Split, std::set<std::string>> patients;
    for (const auto& cs : c.cases) patients[s.of(cs.case_id)].insert(cs.patient_id);
    CHECK(patients[Split::train].size() == 8);
    CHECK(patients[Split::val].size() == 1);
    CHECK(patients[Split::test].size() == 1);
}

TEST_CASE("split is deterministic and patient disjoint")
{
    SynthSpec spec;
    spec.n_cases = 140;
    spec.feature_dim = 4;
    spec.min_tiles = 1;
    spec.max_tiles = 2;
    const Corpus c = synth_generate(spec, 7).corpus;
    std::set<std::string> all_patients;
    for (const auto& cs : c.cases) all_patients.insert(cs.patient_id);
    REQUIRE(all_patients.size() >= 100);
    const SplitAssignment a = split_by_patient(c, {}, 7), b = split_by_patient(c, {}, 7);
    CHECK(a.by_case == b.by_case);
    std::map<std::string, std::set<Split>> seen;
    for (const auto& cs : c.cases) seen[cs.patient_id].insert(a.of(cs.case_id));
    for (const auto& [pid, splits] : seen) CHECK(splits.size() == 1);
}

TEST_CASE("split ratios must sum to one")
{
    CHECK_THROWS_AS(split_by_patient(patients_corpus({{"P", 1}}), {0.5, 0.2, 0.1}, 0), ConfigError);
}

TEST_CASE("split file round trip")
{
    auto dir = testutil::temp_dir("split_rt");
    Corpus c = patients_corpus({{"A", 2}, {"B", 1}, {"C", 1}});
    SplitAssignment s = split_by_patient(c, {0.5, 0.25, 0.25}, 3);
    write_split(dir / "s.json", s);
    CHECK(read_split(dir / "s.json").by_case == s.by_case);
}

TEST_CASE("tokenizer learns the aa merge")
{
    const std::vector<std::string> reports{"aaaa"};
    Tokenizer t = Tokenizer::train(reports, 6);
    REQUIRE(t.merges().size() == 1);
    CHECK(t.piece(t.merges()[0].first) + t.piece(t.merges()[0].second) == "aa");
    const auto ids = t.encode("aaaa");
    CHECK(ids.size() <= 4);
    CHECK(ids.front() == Tokenizer::kBos);
    CHECK(ids.back() == Tokenizer::kEos);
}

TEST_CASE("tokenizer: empty text, round trip, unknown bytes, serialization")
{
    const Corpus c = synth_generate(SynthSpec{}, 2).corpus;
    const auto reports = c.reports();
    Tokenizer t = Tokenizer::train(reports, 300);
    CHECK(t.encode("") == std::vector<std::int32_t>{Tokenizer::kBos, Tokenizer::kEos});
    for (const auto& r : reports) CHECK(t.decode(t.encode(r)) == r);
    CHECK(t.encode("~")[1] == Tokenizer::kUnk);
    CHECK(Tokenizer::from_json(t.to_json()) == t);
    CHECK_THROWS_AS(Tokenizer::train(reports, 5), ConfigError);
}

TEST_CASE("synth: empty, deterministic, subtype mix and report length")
{
    SynthSpec empty;
    empty.n_cases = 0;
    CHECK(synth_generate(empty, 1).corpus.cases.empty());

    auto d1 = testutil::temp_dir("synth_a"), d2 = testutil::temp_dir("synth_b");
    SynthSpec spec;
    spec.n_cases = 12;
    write_corpus(d1, synth_generate(spec, 9).corpus);
    write_corpus(d2, synth_generate(spec, 9).corpus);
    CHECK(slurp(d1 / kManifestName) == slurp(d2 / kManifestName));
    for (const auto& e : fs::directory_iterator(d1 / "features")) {
        CHECK(slurp(e.path()) == slurp(d2 / "features" / e.path().filename()));
    }

    spec.n_cases = 100;
    spec.common_fraction = 0.8;
    const Corpus c = synth_generate(spec, 3).corpus;
    std::size_t common = 0;
    double words[2] = {0, 0};
    std::size_t counts[2] = {0, 0};
    for (const auto& cs : c.cases) {
        std::istringstream is(cs.report);
        const auto n = static_cast<double>(std::distance(std::istream_iterator<std::string>(is), {}));
        const int k = cs.diagnosis_group == DiagnosisGroup::common_nevus ? 0 : 1;
        words[k] += n;
        ++counts[k];
        if (k == 0) ++common;
    }
    CHECK(common >= 70);
    CHECK(common <= 90);
    CHECK(words[1] / static_cast<double>(counts[1]) > words[0] / static_cast<double>(counts[0]));
}

TEST_CASE("synth: identical attributes give identical reports")
{
    SynthSpec spec;
    spec.n_cases = 200;
    spec.n_attributes = 4;
    spec.feature_dim = 4;
    spec.min_tiles = 1;
    spec.max_tiles = 1;
    const SynthCorpus sc = synth_generate(spec, 4);
    for (std::size_t i = 0; i < sc.attributes.size(); ++i)
        for (std::size_t j = i + 1; j < sc.attributes.size(); ++j)
            if (sc.attributes[i] == sc.attributes[j]) CHECK(sc.corpus.cases[i].report == sc.corpus.cases[j].report);
    for (std::size_t i = 0; i < sc.attributes.size(); ++i) {
        CHECK(render_report(sc.attributes[i], spec.grammar_seed) == sc.corpus.cases[i].report);
    }
}
