#include "melreport/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "melreport/binary_io.hpp"
#include "melreport/errors.hpp"

namespace melreport {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kFeatureMagic[8] = {'P', 'A', 'T', 'H', 'F', 'T', '0', '1'};
constexpr std::uint32_t kFeatureVersion = 1;

}  // namespace

std::string to_string(DiagnosisGroup g)
{
    return g == DiagnosisGroup::common_nevus ? "common_nevus" : "other";
}

DiagnosisGroup parse_diagnosis_group(std::string_view text)
{
    if (text == "common_nevus") return DiagnosisGroup::common_nevus;
    if (text == "other") return DiagnosisGroup::other;
    throw DataError("unknown diagnosis_group '" + std::string(text) + "'");
}

void TileFeatureSet::validate() const
{
    if (features.rows == 0) throw DataError("slide " + slide_id + ": no tiles");
    if (!coords.empty()) {
        if (coords.size() != features.rows) throw DataError("slide " + slide_id + ": coordinate count != tile count");
        std::set<TileCoordinate> seen(coords.begin(), coords.end());
        if (seen.size() != coords.size()) throw DataError("slide " + slide_id + ": duplicate tile coordinates");
    }
}

Tensor<float> Case::all_tiles() const
{
    const std::size_t d = slides.empty() ? 0 : slides.front().features.cols;
    Tensor<float> out(tile_count(), d);
    auto it = out.data.begin();
    for (const auto& s : slides) it = std::copy(s.features.data.begin(), s.features.data.end(), it);
    return out;
}

std::size_t Case::tile_count() const
{
    std::size_t n = 0;
    for (const auto& s : slides) n += s.features.rows;
    return n;
}

void Corpus::validate() const
{
    std::set<std::string> ids;
    for (const auto& c : cases) {
        if (!ids.insert(c.case_id).second) throw DataError("duplicate case_id '" + c.case_id + "'");
        if (c.slides.empty()) throw DataError("case " + c.case_id + ": no slides");
        if (c.report.empty()) throw DataError("case " + c.case_id + ": empty report");
        for (const auto& s : c.slides) {
            s.validate();
            if (s.features.cols != feature_dim) {
                throw SchemaError("case " + c.case_id + ": slide " + s.slide_id + " has feature dimension " +
                                  std::to_string(s.features.cols) + ", corpus declares " + std::to_string(feature_dim));
            }
        }
    }
}

const Case& Corpus::find(std::string_view case_id) const
{
    auto it = std::lower_bound(cases.begin(), cases.end(), case_id,
                               [](const Case& c, std::string_view id) { return c.case_id < id; });
    if (it == cases.end() || it->case_id != case_id) throw DataError("unknown case '" + std::string(case_id) + "'");
    return *it;
}

std::vector<std::string> Corpus::reports() const
{
    std::vector<std::string> out;
    out.reserve(cases.size());
    for (const auto& c : cases) out.push_back(c.report);
    return out;
}

void write_feature_file(const fs::path& path, const TileFeatureSet& set)
{
    set.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write feature file " + path.string());
    os.write(kFeatureMagic, 8);
    binio::put_u32(os, kFeatureVersion);
    binio::put_u32(os, static_cast<std::uint32_t>(set.features.rows));
    binio::put_u32(os, static_cast<std::uint32_t>(set.features.cols));
    binio::put_u8(os, set.coords.empty() ? 0 : 1);
    for (const auto& c : set.coords) {
        binio::put_i32(os, c.col);
        binio::put_i32(os, c.row);
    }
    for (float v : set.features.data) binio::put_f32(os, v);
    if (!os) throw DataError("failed writing feature file " + path.string());
}

TileFeatureSet read_feature_file(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open feature file " + path.string());
    const std::string what = "feature file " + path.string();
    char magic[8];
    binio::read_exact(is, magic, 8, what);
    if (!std::equal(magic, magic + 8, kFeatureMagic)) throw DataError(what + ": bad magic");
    const auto version = binio::get_u32(is, what);
    if (version != kFeatureVersion) throw DataError(what + ": unsupported version " + std::to_string(version));
    const auto m = binio::get_u32(is, what);
    const auto d = binio::get_u32(is, what);
    const auto has_coords = binio::get_u8(is, what);
    TileFeatureSet set;
    set.slide_id = path.stem().string();
    if (has_coords) {
        set.coords.resize(m);
        for (auto& c : set.coords) {
            c.col = binio::get_i32(is, what);
            c.row = binio::get_i32(is, what);
        }
    }
    set.features = Tensor<float>(m, d);
    for (auto& v : set.features.data) v = binio::get_f32(is, what);
    return set;
}

Corpus load_corpus(const fs::path& dir, std::optional<std::size_t> feature_dim)
{
    const fs::path manifest = dir / kManifestName;
    std::ifstream is(manifest);
    if (!is) throw DataError("cannot open corpus manifest " + manifest.string());
    if (!feature_dim) {
        std::ifstream info(dir / kCorpusInfoName);
        if (info) feature_dim = json::parse(info).at("feature_dim").get<std::size_t>();
    }

    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        Case c;
        try {
            c.case_id = j.at("case_id").get<std::string>();
            c.patient_id = j.at("patient_id").get<std::string>();
            c.diagnosis_group = parse_diagnosis_group(j.at("diagnosis_group").get<std::string>());
            c.report = j.at("report").get<std::string>();
            for (const auto& f : j.at("feature_files")) {
                const fs::path p = dir / f.get<std::string>();
                if (!fs::exists(p)) throw DataError("case " + c.case_id + ": missing feature file " + p.string());
                c.slides.push_back(read_feature_file(p));
                const std::size_t d = c.slides.back().features.cols;
                if (!feature_dim) feature_dim = d;
                if (d != *feature_dim) {
                    throw SchemaError("case " + c.case_id + ": feature file " + p.string() + " has dimension " +
                                      std::to_string(d) + ", corpus declares " + std::to_string(*feature_dim));
                }
            }
        } catch (const json::exception& e) {
            throw DataError(manifest.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        corpus.cases.push_back(std::move(c));
    }
    corpus.feature_dim = feature_dim.value_or(0);
    std::sort(corpus.cases.begin(), corpus.cases.end(),
              [](const Case& a, const Case& b) { return a.case_id < b.case_id; });
    corpus.validate();
    return corpus;
}

void write_corpus(const fs::path& dir, const Corpus& corpus)
{
    corpus.validate();
    fs::create_directories(dir / "features");
    {
        std::ofstream info(dir / kCorpusInfoName, std::ios::trunc);
        info << json{{"feature_dim", corpus.feature_dim}, {"n_cases", corpus.cases.size()}}.dump() << '\n';
    }
    std::ofstream os(dir / kManifestName, std::ios::trunc);
    if (!os) throw DataError("cannot write manifest in " + dir.string());
    for (const auto& c : corpus.cases) {
        json files = json::array();
        for (const auto& s : c.slides) {
            const std::string rel = "features/" + s.slide_id + ".pft";
            write_feature_file(dir / rel, s);
            files.push_back(rel);
        }
        json j{{"case_id", c.case_id},
               {"patient_id", c.patient_id},
               {"diagnosis_group", to_string(c.diagnosis_group)},
               {"report", c.report},
               {"feature_files", files}};
        os << j.dump() << '\n';
    }
}

std::string to_string(Split s)
{
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view text)
{
    if (text == "train") return Split::train;
    if (text == "val") return Split::val;
    if (text == "test") return Split::test;
    throw ConfigError("unknown split '" + std::string(text) + "'");
}

std::vector<std::string> SplitAssignment::cases_in(Split s) const
{
    std::vector<std::string> out;
    for (const auto& [id, sp] : by_case)
        if (sp == s) out.push_back(id);
    return out;
}

Split SplitAssignment::of(const std::string& case_id) const
{
    auto it = by_case.find(case_id);
    if (it == by_case.end()) throw DataError("case '" + case_id + "' has no split assignment");
    return it->second;
}

SplitAssignment split_by_patient(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed)
{
    const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
    for (double x : r)
        if (x < 0.0) throw ConfigError("split ratios must be non-negative");
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");

    // Distinct patients in first-appearance order over the case_id-sorted corpus.
    std::vector<std::string> patients;
    std::set<std::string> seen;
    for (const auto& c : corpus.cases)
        if (seen.insert(c.patient_id).second) patients.push_back(c.patient_id);
    const std::size_t n_splits = static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [](double x) { return x > 0; }));
    if (patients.size() < n_splits) {
        throw DataError("split_by_patient: " + std::to_string(patients.size()) + " patients cannot fill " +
                        std::to_string(n_splits) + " splits");
    }

    // Largest-remainder target counts, at least one patient per non-empty ratio.
    const std::size_t p = patients.size();
    std::array<std::size_t, 3> target{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = r[i] * static_cast<double>(p);
        target[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        rem[i] = exact - static_cast<double>(target[i]);
        assigned += target[i];
    }
    while (assigned < p) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if (rem[i] > rem[best] + 1e-12) best = i;
        ++target[best];
        rem[best] = -1.0;
        ++assigned;
    }
    for (std::size_t i = 0; i < 3; ++i) {
        if (r[i] > 0 && target[i] == 0) {
            const auto big = static_cast<std::size_t>(std::max_element(target.begin(), target.end()) - target.begin());
            --target[big];
            ++target[i];
        }
    }

    std::mt19937_64 rng(seed);
    std::shuffle(patients.begin(), patients.end(), rng);
    std::map<std::string, Split> patient_split;
    std::size_t idx = 0;
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t k = 0; k < target[s]; ++k) patient_split[patients[idx++]] = static_cast<Split>(s);

    SplitAssignment out;
    for (const auto& c : corpus.cases) out.by_case[c.case_id] = patient_split.at(c.patient_id);
    return out;
}

void write_split(const fs::path& path, const SplitAssignment& split)
{
    json j = json::object();
    for (const auto& [id, s] : split.by_case) j[id] = to_string(s);
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write split file " + path.string());
    os << j.dump(2) << '\n';
}

SplitAssignment read_split(const fs::path& path)
{
    std::ifstream is(path);
    if (!is) throw DataError("cannot open split file " + path.string());
    SplitAssignment out;
    try {
        const json doc = json::parse(is);
        for (const auto& [id, s] : doc.items()) out.by_case[id] = parse_split(s.get<std::string>());
    } catch (const json::exception& e) {
        throw DataError("split file " + path.string() + ": " + e.what());
    }
    return out;
}

}  // namespace melreport
