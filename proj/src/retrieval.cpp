#include "melreport/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "melreport/checkpoint.hpp"
#include "melreport/errors.hpp"
#include "melreport/parallel.hpp"

namespace melreport {

std::string to_string(Direction d) { return d == Direction::image_to_text ? "i2t" : "t2i"; }

Direction parse_direction(std::string_view text)
{
    if (text == "i2t") return Direction::image_to_text;
    if (text == "t2i") return Direction::text_to_image;
    throw ConfigError("unknown direction '" + std::string(text) + "' (i2t, t2i)");
}

std::string to_string(Subset s)
{
    switch (s) {
    case Subset::all: return "all";
    case Subset::common: return "common";
    case Subset::other: return "other";
    }
    return "?";
}

Subset parse_subset(std::string_view text)
{
    if (text == "all") return Subset::all;
    if (text == "common") return Subset::common;
    if (text == "other") return Subset::other;
    throw ConfigError("unknown subset '" + std::string(text) + "' (all, common, other)");
}

void EmbeddingTable::validate() const
{
    const std::size_t n = case_ids.size();
    if (image.rows != n || text.rows != n || groups.size() != n) {
        throw SchemaError("embedding table: row counts differ (ids " + std::to_string(n) + ", image " +
                          std::to_string(image.rows) + ", text " + std::to_string(text.rows) + ")");
    }
    if (image.cols != text.cols) throw SchemaError("embedding table: image and text widths differ");
    for (const auto* m : {&image, &text}) {
        for (std::size_t i = 0; i < n; ++i) {
            double sq = 0.0;
            for (float v : m->row(i)) sq += static_cast<double>(v) * v;
            if (std::abs(std::sqrt(sq) - 1.0) > 1e-3) {
                throw SchemaError("embedding table: row " + std::to_string(i) + " (" + case_ids[i] + ") is not unit length");
            }
        }
    }
}

std::vector<double> similarities(const EmbeddingTable& t, Direction d, std::size_t query)
{
    const Tensor<float>& q = d == Direction::image_to_text ? t.image : t.text;
    const Tensor<float>& pool = d == Direction::image_to_text ? t.text : t.image;
    auto qr = q.row(query);
    std::vector<double> s(pool.rows);
    for (std::size_t j = 0; j < pool.rows; ++j) {
        auto pr = pool.row(j);
        double acc = 0.0;
        for (std::size_t c = 0; c < qr.size(); ++c) acc += static_cast<double>(qr[c]) * pr[c];
        s[j] = acc;
    }
    return s;
}

std::size_t rank_of_match(const EmbeddingTable& t, Direction d, std::size_t query)
{
    if (query >= t.size()) throw ContractError("rank_of_match: query index out of range");
    const std::vector<double> s = similarities(t, d, query);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
        if (j != query && s[j] >= s[query]) ++rank;
    }
    return rank;
}

std::vector<std::size_t> all_ranks(const EmbeddingTable& t, Direction d)
{
    std::vector<std::size_t> ranks(t.size());
    parallel_for(t.size(), [&](std::size_t i) { ranks[i] = rank_of_match(t, d, i); });
    return ranks;
}

std::vector<std::size_t> subset_indices(const EmbeddingTable& t, Subset s)
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (s == Subset::all || (s == Subset::common) == (t.groups[i] == DiagnosisGroup::common_nevus)) out.push_back(i);
    }
    return out;
}

RankMetrics rank_metrics(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& queries,
                         const std::vector<std::size_t>& ks)
{
    if (queries.empty()) throw ContractError("retrieval metrics: empty query subset");
    RankMetrics m;
    m.recall.assign(ks.size(), 0.0);
    std::vector<std::size_t> r;
    r.reserve(queries.size());
    double sum = 0.0;
    for (std::size_t q : queries) {
        const std::size_t rank = ranks.at(q);
        r.push_back(rank);
        sum += static_cast<double>(rank);
        for (std::size_t k = 0; k < ks.size(); ++k) {
            if (rank <= ks[k]) m.recall[k] += 1.0;
        }
    }
    const auto n = static_cast<double>(queries.size());
    for (double& v : m.recall) v /= n;
    m.mean_rank = sum / n;
    const auto mid = r.begin() + static_cast<std::ptrdiff_t>((r.size() - 1) / 2);
    std::nth_element(r.begin(), mid, r.end());
    m.median_rank = static_cast<double>(*mid);
    return m;
}

double quantile(std::vector<double> values, double p)
{
    if (values.empty()) throw ContractError("quantile: no values");
    if (!(p >= 0.0 && p <= 1.0)) throw ContractError("quantile: p outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

std::vector<std::size_t> bootstrap_resample(std::size_t n, std::uint64_t seed, std::size_t r)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> idx(n);
    for (auto& v : idx) v = static_cast<std::size_t>(rng() % n);
    return idx;
}

MetricIntervals bootstrap_ci(const std::vector<std::size_t>& ranks, const std::vector<std::size_t>& queries,
                             const std::vector<std::size_t>& ks, std::size_t resamples, std::uint64_t seed, double level)
{
    if (resamples < 2) throw ContractError("bootstrap_ci: need at least 2 resamples");
    if (queries.empty()) throw ContractError("bootstrap_ci: empty query subset");
    if (!(level > 0.0 && level < 1.0)) throw ContractError("bootstrap_ci: level outside (0, 1)");
    std::vector<RankMetrics> draws(resamples);
    parallel_for(resamples, [&](std::size_t r) {
        const std::vector<std::size_t> pick = bootstrap_resample(queries.size(), seed, r);
        std::vector<std::size_t> q(pick.size());
        for (std::size_t i = 0; i < pick.size(); ++i) q[i] = queries[pick[i]];
        draws[r] = rank_metrics(ranks, q, ks);
    });
    // Snapped to the decimal grid: (1 - 0.95) / 2 is not 0.025 in binary.
    const double lo_p = std::round((1.0 - level) / 2.0 * 1e9) / 1e9;
    const double hi_p = std::round((1.0 + level) / 2.0 * 1e9) / 1e9;
    auto interval = [&](auto get) {
        std::vector<double> v(resamples);
        for (std::size_t r = 0; r < resamples; ++r) v[r] = get(draws[r]);
        return Interval{quantile(v, lo_p), quantile(v, hi_p)};
    };
    MetricIntervals ci;
    for (std::size_t k = 0; k < ks.size(); ++k) ci.recall.push_back(interval([k](const RankMetrics& m) { return m.recall[k]; }));
    ci.mean_rank = interval([](const RankMetrics& m) { return m.mean_rank; });
    ci.median_rank = interval([](const RankMetrics& m) { return m.median_rank; });
    return ci;
}

double RetrievalReport::recall_at(std::size_t k) const
{
    const auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw ContractError("recall@" + std::to_string(k) + " was not computed");
    return point.recall[static_cast<std::size_t>(it - ks.begin())];
}

namespace {

void check_ks(const std::vector<std::size_t>& ks)
{
    if (ks.empty()) throw ConfigError("retrieval: empty k list");
    for (std::size_t k : ks) {
        if (k == 0) throw ConfigError("retrieval: k must be >= 1");
    }
}

}  // namespace

RetrievalReport metrics(const EmbeddingTable& t, Direction d, Subset s, const std::vector<std::size_t>& ks)
{
    check_ks(ks);
    RetrievalReport rep;
    rep.direction = d;
    rep.subset = s;
    rep.ks = ks;
    rep.pool_size = t.size();
    const auto queries = subset_indices(t, s);
    rep.n_queries = queries.size();
    rep.point = rank_metrics(all_ranks(t, d), queries, ks);
    return rep;
}

RetrievalReport evaluate_retrieval(const EmbeddingTable& t, Direction d, Subset s, const std::vector<std::size_t>& ks,
                                   std::size_t resamples, std::uint64_t seed)
{
    check_ks(ks);
    RetrievalReport rep;
    rep.direction = d;
    rep.subset = s;
    rep.ks = ks;
    rep.pool_size = t.size();
    const auto queries = subset_indices(t, s);
    rep.n_queries = queries.size();
    const auto ranks = all_ranks(t, d);
    rep.point = rank_metrics(ranks, queries, ks);
    rep.ci = bootstrap_ci(ranks, queries, ks, resamples, seed);
    rep.resamples = resamples;
    return rep;
}

nlohmann::json to_json(const RetrievalReport& r)
{
    nlohmann::json j;
    j["direction"] = to_string(r.direction);
    j["subset"] = to_string(r.subset);
    j["n_queries"] = r.n_queries;
    j["pool_size"] = r.pool_size;
    j["bootstrap_resamples"] = r.resamples;
    auto ci = [&](const Interval& iv) { return nlohmann::json::array({iv.lo, iv.hi}); };
    for (std::size_t k = 0; k < r.ks.size(); ++k) {
        const std::string key = "recall@" + std::to_string(r.ks[k]);
        j[key] = r.point.recall[k];
        if (r.resamples > 0) j[key + "_ci"] = ci(r.ci.recall[k]);
    }
    j["mean_rank"] = r.point.mean_rank;
    j["median_rank"] = r.point.median_rank;
    if (r.resamples > 0) {
        j["mean_rank_ci"] = ci(r.ci.mean_rank);
        j["median_rank_ci"] = ci(r.ci.median_rank);
    }
    return j;
}

std::string reports_csv(const std::vector<RetrievalReport>& reports)
{
    std::ostringstream os;
    os.precision(9);
    os << "direction,subset,n_queries,pool_size,metric,value,ci_lo,ci_hi\n";
    for (const auto& r : reports) {
        auto row = [&](const std::string& metric, double v, const Interval* iv) {
            os << to_string(r.direction) << ',' << to_string(r.subset) << ',' << r.n_queries << ',' << r.pool_size << ','
               << metric << ',' << v << ',';
            if (iv != nullptr) os << iv->lo << ',' << iv->hi;
            else os << ',';
            os << '\n';
        };
        const bool has_ci = r.resamples > 0;
        for (std::size_t k = 0; k < r.ks.size(); ++k) {
            row("recall@" + std::to_string(r.ks[k]), r.point.recall[k], has_ci ? &r.ci.recall[k] : nullptr);
        }
        row("mean_rank", r.point.mean_rank, has_ci ? &r.ci.mean_rank : nullptr);
        row("median_rank", r.point.median_rank, has_ci ? &r.ci.median_rank : nullptr);
    }
    return os.str();
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& t)
{
    t.validate();
    TensorContainer c;
    c.meta["kind"] = "embeddings";
    c.meta["case_ids"] = t.case_ids;
    std::vector<std::string> groups;
    for (auto g : t.groups) groups.push_back(to_string(g));
    c.meta["groups"] = groups;
    auto put = [&](const std::string& name, const Tensor<float>& m) {
        c.tensors.push_back({name, {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}, m.data, false});
    };
    put("image", t.image);
    put("text", t.text);
    write_tensor_container(path, c);
}

EmbeddingTable load_embeddings(const std::filesystem::path& path)
{
    const TensorContainer c = read_tensor_container(path);
    if (c.meta.value("kind", "") != "embeddings") throw SchemaError(path.string() + ": not an embedding table");
    EmbeddingTable t;
    try {
        t.case_ids = c.meta.at("case_ids").get<std::vector<std::string>>();
        for (const auto& g : c.meta.at("groups").get<std::vector<std::string>>()) t.groups.push_back(parse_diagnosis_group(g));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    auto take = [&](const std::string& name) {
        const NamedTensor& nt = c.get(name);
        if (nt.shape.size() != 2) throw SchemaError(path.string() + ": tensor '" + name + "' is not 2-D");
        Tensor<float> m(nt.shape[0], nt.shape[1]);
        m.data = nt.data;
        return m;
    };
    t.image = take("image");
    t.text = take("text");
    t.validate();
    return t;
}

EmbeddingTable compute_embeddings(CocaModel<float>& model, const Tokenizer& tokenizer, const Corpus& corpus,
                                  const std::vector<std::string>& case_ids)
{
    const std::size_t n = case_ids.size();
    const std::size_t dim = model.config().decoder.contrastive_dim;
    const std::size_t max_len = model.config().decoder.max_seq_len;
    EmbeddingTable t;
    t.case_ids = case_ids;
    t.image = Tensor<float>(n, dim);
    t.text = Tensor<float>(n, dim);
    t.groups.resize(n);
    parallel_for(n, [&](std::size_t i) {
        const Case& c = corpus.find(case_ids[i]);
        t.groups[i] = c.diagnosis_group;
        const std::vector<float> img = model.image_embedding(c.all_tiles());
        const std::vector<float> txt = model.text_embedding(encode_truncated(tokenizer, c.report, max_len));
        std::copy(img.begin(), img.end(), t.image.row(i).begin());
        std::copy(txt.begin(), txt.end(), t.text.row(i).begin());
    });
    return t;
}

}  // namespace melreport
