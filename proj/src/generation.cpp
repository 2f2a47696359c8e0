#include "melreport/generation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "melreport/errors.hpp"

namespace melreport {

std::string to_string(DecodeStrategy s)
{
    switch (s) {
    case DecodeStrategy::greedy: return "greedy";
    case DecodeStrategy::sample: return "sample";
    case DecodeStrategy::beam: return "beam";
    }
    return "?";
}

DecodeStrategy parse_decode_strategy(std::string_view text)
{
    if (text == "greedy") return DecodeStrategy::greedy;
    if (text == "sample") return DecodeStrategy::sample;
    if (text == "beam") return DecodeStrategy::beam;
    throw ConfigError("unknown decode strategy '" + std::string(text) + "' (greedy, sample, beam)");
}

void DecodeOptions::validate(std::size_t max_seq_len) const
{
    if (max_len == 0) throw ConfigError("generate: max_len must be >= 1");
    if (max_len > max_seq_len) {
        throw ConfigError("generate: max_len " + std::to_string(max_len) + " exceeds max_seq_len " +
                          std::to_string(max_seq_len));
    }
    if (strategy == DecodeStrategy::sample && !(temperature > 0.0)) throw ConfigError("generate: temperature must be positive");
    if (strategy == DecodeStrategy::beam && (beam_width < 1 || beam_width > 4)) {
        throw ConfigError("generate: beam width must be in 1..4");
    }
}

namespace {

std::vector<double> log_softmax_last(const Tensor<float>& logits)
{
    auto row = logits.row(logits.rows - 1);
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    const double lz = mx + std::log(z);
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = static_cast<double>(row[i]) - lz;
    return out;
}

GeneratedReport finish(std::vector<std::int32_t> seq, bool eos, const Tokenizer& tok)
{
    GeneratedReport r;
    r.tokens.assign(seq.begin() + 1, seq.end());
    if (eos) r.tokens.pop_back();
    r.stopped_at_eos = eos;
    r.truncated = !eos;
    r.text = tok.decode(r.tokens);
    return r;
}

GeneratedReport decode_stepwise(CocaModel<float>& model, const CaseEmbedding<float>& emb, const Tokenizer& tok,
                                const DecodeOptions& opts)
{
    std::vector<std::int32_t> seq{Tokenizer::kBos};
    std::mt19937_64 rng(opts.seed);
    for (std::size_t step = 0; step < opts.max_len; ++step) {
        const Tensor<float> logits = model.logits(emb, seq);
        auto row = logits.row(logits.rows - 1);
        std::int32_t next = 0;
        if (opts.strategy == DecodeStrategy::greedy) {
            next = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
        } else {
            std::vector<double> lp = log_softmax_last(logits);
            double mx = -std::numeric_limits<double>::infinity();
            for (double& v : lp) mx = std::max(mx, v /= opts.temperature);
            for (double& v : lp) v = std::exp(v - mx);
            std::discrete_distribution<std::int32_t> dist(lp.begin(), lp.end());
            next = dist(rng);
        }
        seq.push_back(next);
        if (next == Tokenizer::kEos) return finish(std::move(seq), true, tok);
    }
    return finish(std::move(seq), false, tok);
}

struct Hypothesis {
    std::vector<std::int32_t> seq;
    double logp = 0.0;
    bool done = false;

    [[nodiscard]] double score() const { return logp / static_cast<double>(seq.size() - 1); }
};

bool better(const Hypothesis& a, const Hypothesis& b)
{
    if (a.score() != b.score()) return a.score() > b.score();
    return a.seq < b.seq;
}

GeneratedReport decode_beam(CocaModel<float>& model, const CaseEmbedding<float>& emb, const Tokenizer& tok,
                            const DecodeOptions& opts)
{
    const std::size_t width = opts.beam_width;
    std::vector<Hypothesis> live{{{Tokenizer::kBos}, 0.0, false}};
    std::vector<Hypothesis> done;
    for (std::size_t step = 0; step < opts.max_len && !live.empty(); ++step) {
        std::vector<Hypothesis> cand;
        for (const auto& h : live) {
            const std::vector<double> lp = log_softmax_last(model.logits(emb, h.seq));
            std::vector<std::int32_t> ids(lp.size());
            for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int32_t>(i);
            const std::size_t k = std::min(width, ids.size());
            std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                              [&](std::int32_t a, std::int32_t b) { return lp[a] != lp[b] ? lp[a] > lp[b] : a < b; });
            for (std::size_t j = 0; j < k; ++j) {
                Hypothesis n = h;
                n.seq.push_back(ids[j]);
                n.logp += lp[static_cast<std::size_t>(ids[j])];
                n.done = ids[j] == Tokenizer::kEos;
                cand.push_back(std::move(n));
            }
        }
        std::sort(cand.begin(), cand.end(), better);
        live.clear();
        for (auto& c : cand) {
            if (live.size() == width) break;
            if (c.done) done.push_back(std::move(c));
            else live.push_back(std::move(c));
        }
        if (done.size() >= width) break;
    }
    for (auto& h : live) done.push_back(std::move(h));
    const auto best = std::min_element(done.begin(), done.end(), better);
    return finish(best->seq, best->done, tok);
}

}  // namespace

GeneratedReport generate(CocaModel<float>& model, const CaseEmbedding<float>& embedding, const Tokenizer& tokenizer,
                         const DecodeOptions& opts)
{
    opts.validate(model.config().decoder.max_seq_len);
    if (opts.strategy == DecodeStrategy::beam) return decode_beam(model, embedding, tokenizer, opts);
    return decode_stepwise(model, embedding, tokenizer, opts);
}

std::size_t detect_repetitions(std::string_view text, std::size_t n)
{
    if (n == 0) throw ConfigError("detect_repetitions: n must be >= 1");
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else if (!std::ispunct(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    if (words.size() < n) return 0;
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= words.size(); ++i) {
        ++counts[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                          words.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](const auto& kv) { return kv.second >= 2; }));
}

}  // namespace melreport
