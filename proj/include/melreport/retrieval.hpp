#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "melreport/corpus.hpp"
#include "melreport/model.hpp"
#include "melreport/tensor.hpp"
#include "melreport/tokenizer.hpp"

namespace melreport {

enum class Direction { image_to_text, text_to_image };
std::string to_string(Direction d);  // "i2t" / "t2i"
Direction parse_direction(std::string_view text);

enum class Subset { all, common, other };
std::string to_string(Subset s);
Subset parse_subset(std::string_view text);

// Row i of `image` and `text` belong to case_ids[i]; rows are L2-normalized.
struct EmbeddingTable {
    std::vector<std::string> case_ids;
    Tensor<float> image;
    Tensor<float> text;
    std::vector<DiagnosisGroup> groups;

    [[nodiscard]] std::size_t size() const noexcept { return case_ids.size(); }
    void validate() const;
};

// Cosine similarities of query i against every counterpart in the table.
std::vector<double> similarities(const EmbeddingTable& t, Direction d, std::size_t query);

// 1 + #{j != i : s_ij >= s_ii}; ties rank against the match.
std::size_t rank_of_match(const EmbeddingTable& t, Direction d, std::size_t query);

// Ranks of every query against the full pool. Computed once; subsets and
// bootstrap resamples only aggregate these.
std::vector<std::size_t> all_ranks(const EmbeddingTable& t, Direction d);

std::vector<std::size_t> subset_indices(const EmbeddingTable& t, Subset s);

struct RankMetrics {
    std::vector<double> recall;  // aligned with the k list
    double mean_rank = 0.0;
    double median_rank = 0.0;  // lower middle for even counts
};

RankMetrics rank_metrics(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& queries,
                         const std::vector<std::size_t>& ks);

// Linear interpolation between order statistics at h = (n-1)·p.
double quantile(std::vector<double> values, double p);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct MetricIntervals {
    std::vector<Interval> recall;
    Interval mean_rank;
    Interval median_rank;
};

// Resample r draws its query indices from mt19937_64 seeded with
// seed_seq{seed low 32 bits, seed high 32 bits, r}; each draw is rng() % n.
std::vector<std::size_t> bootstrap_resample(std::size_t n, std::uint64_t seed, std::size_t r);

// Percentile bootstrap over query cases; the retrieval pool is never
// resampled.
MetricIntervals bootstrap_ci(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& queries,
                             const std::vector<std::size_t>& ks, std::size_t resamples = 1000, std::uint64_t seed = 0,
                             double level = 0.95);

struct RetrievalReport {
    Direction direction = Direction::image_to_text;
    Subset subset = Subset::all;
    std::size_t n_queries = 0;
    std::size_t pool_size = 0;
    std::vector<std::size_t> ks;
    RankMetrics point;
    MetricIntervals ci;
    std::size_t resamples = 0;

    [[nodiscard]] double recall_at(std::size_t k) const;
};

RetrievalReport metrics(const EmbeddingTable& t, Direction d, Subset s, const std::vector<std::size_t>& ks = {1, 5, 10});

RetrievalReport evaluate_retrieval(const EmbeddingTable& t, Direction d, Subset s,
                                   const std::vector<std::size_t>& ks = {1, 5, 10}, std::size_t resamples = 1000,
                                   std::uint64_t seed = 0);

nlohmann::json to_json(const RetrievalReport& r);
std::string reports_csv(const std::vector<RetrievalReport>& reports);

// Container tensors "image" and "text"; case ids and groups in the JSON.
void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& t);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

// Image embeddings use every tile of the case.
EmbeddingTable compute_embeddings(CocaModel<float>& model, const Tokenizer& tokenizer, const Corpus& corpus,
                                  const std::vector<std::string>& case_ids);

}  // namespace melreport
