#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "melreport/tensor.hpp"

namespace melreport {

enum class DiagnosisGroup { common_nevus, other };

std::string to_string(DiagnosisGroup g);
DiagnosisGroup parse_diagnosis_group(std::string_view text);

struct TileCoordinate {
    std::int32_t col = 0;
    std::int32_t row = 0;
    bool operator==(const TileCoordinate&) const = default;
    auto operator<=>(const TileCoordinate&) const = default;
};

// Tile feature vectors of one slide (M×D) and, optionally, their grid
// positions at extraction magnification.
struct TileFeatureSet {
    std::string slide_id;
    Tensor<float> features;
    std::vector<TileCoordinate> coords;  // empty or one per row

    void validate() const;
};

struct Case {
    std::string case_id;
    std::string patient_id;
    std::vector<TileFeatureSet> slides;
    std::string report;
    DiagnosisGroup diagnosis_group = DiagnosisGroup::common_nevus;

    // All tiles of all slides stacked in slide order.
    [[nodiscard]] Tensor<float> all_tiles() const;
    [[nodiscard]] std::size_t tile_count() const;
};

struct Corpus {
    std::size_t feature_dim = 0;
    std::vector<Case> cases;  // sorted by case_id

    void validate() const;
    [[nodiscard]] const Case& find(std::string_view case_id) const;
    [[nodiscard]] std::vector<std::string> reports() const;
};

// Feature file: "PATHFT01", u32 version, u32 M, u32 D, u8 has_coords,
// [M×2 i32 coords], M×D f32 row-major; all little-endian.
void write_feature_file(const std::filesystem::path& path, const TileFeatureSet& set);
TileFeatureSet read_feature_file(const std::filesystem::path& path);

inline constexpr const char* kManifestName = "manifest.jsonl";
inline constexpr const char* kCorpusInfoName = "corpus.json";

// Reads manifest.jsonl (one case per line) and the feature files it
// references. The expected dimension comes from `feature_dim`, else from
// corpus.json, else from the first feature file.
Corpus load_corpus(const std::filesystem::path& dir, std::optional<std::size_t> feature_dim = std::nullopt);

// Writes manifest.jsonl, corpus.json and features/<slide_id>.pft.
void write_corpus(const std::filesystem::path& dir, const Corpus& corpus);

enum class Split { train, val, test };
std::string to_string(Split s);
Split parse_split(std::string_view text);

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct SplitAssignment {
    std::map<std::string, Split> by_case;

    [[nodiscard]] std::vector<std::string> cases_in(Split s) const;  // sorted
    [[nodiscard]] Split of(const std::string& case_id) const;
};

// Seeded shuffle of distinct patients, then greedy fill of train/val/test by
// target patient counts. Cases of one patient never straddle splits.
SplitAssignment split_by_patient(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed);

void write_split(const std::filesystem::path& path, const SplitAssignment& split);
SplitAssignment read_split(const std::filesystem::path& path);

}  // namespace melreport
