#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "melreport/retrieval.hpp"

using namespace melreport;

namespace {

EmbeddingTable random_table(std::size_t n, std::size_t d, std::uint64_t seed, bool quantize = false)
{
    EmbeddingTable t;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    t.image = Tensor<float>(n, d);
    t.text = Tensor<float>(n, d);
    for (auto* m : {&t.image, &t.text}) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (auto& v : m->row(i)) {
                double x = nd(rng);
                if (quantize) x = std::round(x);  // provokes ties
                if (quantize && x == 0.0) x = 1.0;
                v = static_cast<float>(x);
                s += x * x;
            }
            for (auto& v : m->row(i)) v = static_cast<float>(v / std::sqrt(s));
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        t.case_ids.push_back("C" + std::to_string(i));
        t.groups.push_back(rng() % 4 == 0 ? DiagnosisGroup::other : DiagnosisGroup::common_nevus);
    }
    return t;
}

// Sort the pool by similarity, placing the true match after every tied
// item; the rank is its 1-based position.
std::size_t oracle_rank(const EmbeddingTable& t, Direction d, std::size_t q)
{
    const auto& qm = d == Direction::image_to_text ? t.image : t.text;
    const auto& pm = d == Direction::image_to_text ? t.text : t.image;
    std::vector<std::pair<double, int>> items;
    for (std::size_t j = 0; j < pm.rows; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < pm.cols; ++c) s += static_cast<double>(qm(q, c)) * pm(j, c);
        items.push_back({s, j == q ? 1 : 0});
    }
    std::sort(items.begin(), items.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t k = 0; k < items.size(); ++k)
        if (items[k].second == 1) return k + 1;
    return 0;
}

struct OracleMetrics {
    std::vector<double> recall;
    double mean = 0, median = 0;
};

OracleMetrics oracle_metrics(std::vector<std::size_t> ranks, const std::vector<std::size_t>& ks)
{
    OracleMetrics m;
    for (std::size_t k : ks) {
        std::size_t hit = 0;
        for (auto r : ranks) hit += r <= k;
        m.recall.push_back(static_cast<double>(hit) / static_cast<double>(ranks.size()));
    }
    m.mean = static_cast<double>(std::accumulate(ranks.begin(), ranks.end(), std::size_t{0})) / static_cast<double>(ranks.size());
    std::sort(ranks.begin(), ranks.end());
    m.median = static_cast<double>(ranks[(ranks.size() + 1) / 2 - 1]);
    return m;
}

double oracle_percentile(std::vector<double> v, double p)
{
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const std::size_t below = static_cast<std::size_t>(pos);
    const std::size_t above = std::min(below + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(below);
    return (1.0 - frac) * v[below] + frac * v[above];
}

}  // namespace

TEST_CASE("orthonormal table ranks every match first; identical table ranks last")
{
    EmbeddingTable t;
    const std::size_t n = 5;
    t.image = Tensor<float>(n, n);
    for (std::size_t i = 0; i < n; ++i) t.image(i, i) = 1.0f;
    t.text = t.image;
    for (std::size_t i = 0; i < n; ++i) {
        t.case_ids.push_back(std::to_string(i));
        t.groups.push_back(i % 2 ? DiagnosisGroup::other : DiagnosisGroup::common_nevus);
    }
    for (auto d : {Direction::image_to_text, Direction::text_to_image})
        for (std::size_t i = 0; i < n; ++i) CHECK(rank_of_match(t, d, i) == 1);
    for (auto s : {Subset::all, Subset::common, Subset::other}) {
        const auto r = metrics(t, Direction::image_to_text, s);
        CHECK(r.recall_at(1) == 1.0);
        CHECK(r.point.mean_rank == 1.0);
        CHECK(r.point.median_rank == 1.0);
    }

    EmbeddingTable same = t;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < n; ++c) same.image(i, c) = same.text(i, c) = c == 0 ? 1.0f : 0.0f;
    for (std::size_t i = 0; i < n; ++i) CHECK(rank_of_match(same, Direction::text_to_image, i) == n);
}

TEST_CASE("ranks and metrics match the sort oracle on random tables")
{
    const std::vector<std::size_t> ks{1, 5, 10};
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const EmbeddingTable t = random_table(8 + seed % 20, 6, seed, seed % 2 == 1);
        for (auto d : {Direction::image_to_text, Direction::text_to_image}) {
            const auto ranks = all_ranks(t, d);
            for (std::size_t i = 0; i < t.size(); ++i) CHECK(ranks[i] == oracle_rank(t, d, i));
            for (auto s : {Subset::all, Subset::common, Subset::other}) {
                const auto idx = subset_indices(t, s);
                if (idx.empty()) {
                    CHECK_THROWS_AS(metrics(t, d, s), ContractError);
                    continue;
                }
                std::vector<std::size_t> sub;
                for (auto i : idx) sub.push_back(oracle_rank(t, d, i));
                const OracleMetrics o = oracle_metrics(sub, ks);
                const RetrievalReport r = metrics(t, d, s, ks);
                CHECK(r.point.recall == o.recall);
                CHECK(r.point.mean_rank == o.mean);
                CHECK(r.point.median_rank == o.median);
                CHECK(r.recall_at(1) <= r.recall_at(5));
                CHECK(r.recall_at(5) <= r.recall_at(10));
                CHECK(r.pool_size == t.size());
            }
        }
    }
}

TEST_CASE("rank arithmetic example")
{
    const std::vector<std::size_t> ranks{1, 2, 100};
    const auto m = rank_metrics(ranks, {0, 1, 2}, {1, 5, 10});
    CHECK(m.mean_rank == doctest::Approx(34.333333333333336));
    CHECK(m.median_rank == 2.0);
    CHECK(rank_metrics({4, 1, 3, 2}, {0, 1, 2, 3}, {1}).median_rank == 2.0);
    CHECK_THROWS_AS(rank_metrics(ranks, {}, {1}), ContractError);
}

TEST_CASE("quantile interpolates between order statistics")
{
    CHECK(quantile({3.0, 1.0, 2.0, 4.0}, 0.5) == 2.5);
    CHECK(quantile({5.0}, 0.975) == 5.0);
    CHECK(quantile({0.0, 10.0}, 0.025) == doctest::Approx(0.25));
}

TEST_CASE("bootstrap: constant metric and singleton subsets give zero-width intervals")
{
    const std::vector<std::size_t> ranks(10, 3);
    std::vector<std::size_t> all(10);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto ci = bootstrap_ci(ranks, all, {1, 5}, 200, 4);
    CHECK(ci.recall[0].lo == 0.0);
    CHECK(ci.recall[0].hi == 0.0);
    CHECK(ci.recall[1].lo == 1.0);
    CHECK(ci.mean_rank.lo == 3.0);
    CHECK(ci.mean_rank.hi == 3.0);

    const std::vector<std::size_t> mixed{1, 7, 2, 30};
    const auto one = bootstrap_ci(mixed, {2}, {1}, 100, 9);
    CHECK(one.mean_rank.lo == 2.0);
    CHECK(one.mean_rank.hi == 2.0);
    CHECK_THROWS_AS(bootstrap_ci(mixed, {0}, {1}, 1, 0), ContractError);
}

TEST_CASE("bootstrap matches an independent percentile implementation; point estimate inside the CI")
{
    const std::vector<std::size_t> ks{1, 5, 10};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const EmbeddingTable t = random_table(20, 5, 100 + seed);
        for (auto s : {Subset::all, Subset::common}) {
            const auto r = evaluate_retrieval(t, Direction::image_to_text, s, ks, 1000, seed);
            std::vector<std::size_t> ranks;
            for (std::size_t i = 0; i < t.size(); ++i) ranks.push_back(oracle_rank(t, Direction::image_to_text, i));
            const auto idx = subset_indices(t, s);
            std::vector<std::vector<double>> dist(ks.size() + 2);
            for (std::uint32_t b = 0; b < 1000; ++b) {
                std::seed_seq sq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32), b};
                std::mt19937_64 gen(sq);
                std::vector<std::size_t> sample;
                for (std::size_t k = 0; k < idx.size(); ++k) sample.push_back(ranks[idx[gen() % idx.size()]]);
                const OracleMetrics o = oracle_metrics(sample, ks);
                for (std::size_t k = 0; k < ks.size(); ++k) dist[k].push_back(o.recall[k]);
                dist[ks.size()].push_back(o.mean);
                dist[ks.size() + 1].push_back(o.median);
            }
            for (std::size_t k = 0; k < ks.size(); ++k) {
                CHECK(r.ci.recall[k].lo == oracle_percentile(dist[k], 0.025));
                CHECK(r.ci.recall[k].hi == oracle_percentile(dist[k], 0.975));
                CHECK(r.ci.recall[k].lo <= r.point.recall[k]);
                CHECK(r.point.recall[k] <= r.ci.recall[k].hi);
            }
            CHECK(r.ci.mean_rank.lo == doctest::Approx(oracle_percentile(dist[ks.size()], 0.025)).epsilon(1e-12));
            CHECK(r.ci.mean_rank.hi == doctest::Approx(oracle_percentile(dist[ks.size()], 0.975)).epsilon(1e-12));
            CHECK(r.ci.median_rank.lo == oracle_percentile(dist[ks.size() + 1], 0.025));
            CHECK(r.ci.median_rank.hi == oracle_percentile(dist[ks.size() + 1], 0.975));
            CHECK(r.ci.mean_rank.lo <= r.point.mean_rank);
            CHECK(r.point.mean_rank <= r.ci.mean_rank.hi);
        }
    }
}

TEST_CASE("embedding table file round trip and validation")
{
    auto dir = testutil::temp_dir("emb");
    const EmbeddingTable t = random_table(6, 4, 3);
    save_embeddings(dir / "e.bin", t);
    const EmbeddingTable back = load_embeddings(dir / "e.bin");
    CHECK(back.case_ids == t.case_ids);
    CHECK(back.groups == t.groups);
    CHECK(back.image == t.image);
    CHECK(back.text == t.text);

    EmbeddingTable bad = t;
    bad.image(0, 0) += 1.0f;
    CHECK_THROWS_AS(bad.validate(), SchemaError);
    const auto json = to_json(metrics(t, Direction::text_to_image, Subset::all));
    CHECK(json.at("direction") == "t2i");
    CHECK(json.contains("recall@5"));
}
