#include "melreport/tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <set>

#include "melreport/errors.hpp"

namespace melreport {

namespace {

using Pair = std::pair<std::int32_t, std::int32_t>;

// Replace every non-overlapping occurrence of `pair`, left to right.
void merge_in_place(std::vector<std::int32_t>& seq, const Pair& pair, std::int32_t merged)
{
    std::size_t w = 0;
    for (std::size_t r = 0; r < seq.size();) {
        if (r + 1 < seq.size() && seq[r] == pair.first && seq[r + 1] == pair.second) {
            seq[w++] = merged;
            r += 2;
        } else {
            seq[w++] = seq[r++];
        }
    }
    seq.resize(w);
}

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t start = i;
        while (i < text.size() && text[i] == ' ') ++i;
        while (i < text.size() && text[i] != ' ') ++i;
        out.push_back(text.substr(start, i - start));
    }
    return out;
}

Tokenizer Tokenizer::train(std::span<const std::string> reports, std::size_t vocab_size)
{
    std::set<std::uint8_t> alphabet;
    for (const auto& r : reports)
        for (char c : r) alphabet.insert(static_cast<std::uint8_t>(c));
    if (vocab_size < alphabet.size() + kNumSpecial) {
        throw ConfigError("tokenizer: vocab_size " + std::to_string(vocab_size) + " is smaller than " +
                          std::to_string(alphabet.size()) + " distinct bytes + " + std::to_string(kNumSpecial) +
                          " special tokens");
    }
    Tokenizer tok;
    tok.bytes_.assign(alphabet.begin(), alphabet.end());
    tok.rebuild();

    // Distinct chunks with their frequencies, as id sequences.
    std::map<std::string, std::size_t> chunk_counts;
    for (const auto& r : reports)
        for (auto chunk : pretokenize(r)) ++chunk_counts[std::string(chunk)];
    std::vector<std::pair<std::vector<std::int32_t>, std::size_t>> words;
    words.reserve(chunk_counts.size());
    for (const auto& [chunk, count] : chunk_counts) {
        std::vector<std::int32_t> ids;
        for (char c : chunk) ids.push_back(tok.byte_to_id_[static_cast<std::uint8_t>(c)]);
        words.emplace_back(std::move(ids), count);
    }

    while (tok.pieces_.size() < vocab_size) {
        std::map<Pair, std::size_t> pair_counts;
        for (const auto& [ids, count] : words)
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) pair_counts[{ids[i], ids[i + 1]}] += count;
        if (pair_counts.empty()) break;
        // std::map iterates pairs in ascending order, so the first maximum is
        // the smallest pair among ties.
        auto best = pair_counts.begin();
        for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it)
            if (it->second > best->second) best = it;
        const Pair pair = best->first;
        const auto merged = static_cast<std::int32_t>(tok.pieces_.size());
        tok.merges_.push_back(pair);
        tok.pieces_.push_back(tok.pieces_[static_cast<std::size_t>(pair.first)] +
                              tok.pieces_[static_cast<std::size_t>(pair.second)]);
        for (auto& [ids, count] : words) merge_in_place(ids, pair, merged);
    }
    tok.rebuild();
    return tok;
}

void Tokenizer::rebuild()
{
    pieces_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
    byte_to_id_.assign(256, kUnk);
    merge_rank_.clear();
    for (auto b : bytes_) {
        byte_to_id_[b] = static_cast<std::int32_t>(pieces_.size());
        pieces_.emplace_back(1, static_cast<char>(b));
    }
    for (const auto& [a, b] : merges_) {
        const auto n = static_cast<std::int32_t>(pieces_.size());
        if (a < 0 || b < 0 || a >= n || b >= n) throw DataError("tokenizer: merge references unknown id");
        merge_rank_.emplace(Pair{a, b}, pieces_.size() - kNumSpecial - bytes_.size());
        pieces_.push_back(pieces_[static_cast<std::size_t>(a)] + pieces_[static_cast<std::size_t>(b)]);
    }
}

std::vector<std::int32_t> Tokenizer::encode_chunk(std::string_view chunk) const
{
    std::vector<std::int32_t> seq;
    seq.reserve(chunk.size());
    for (char c : chunk) seq.push_back(byte_to_id_[static_cast<std::uint8_t>(c)]);
    // Apply the lowest-ranked merge present until none applies.
    const std::int32_t first_merge_id = static_cast<std::int32_t>(kNumSpecial + bytes_.size());
    while (seq.size() > 1) {
        std::size_t best_rank = std::numeric_limits<std::size_t>::max();
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            auto it = merge_rank_.find({seq[i], seq[i + 1]});
            if (it != merge_rank_.end()) best_rank = std::min(best_rank, it->second);
        }
        if (best_rank == std::numeric_limits<std::size_t>::max()) break;
        merge_in_place(seq, merges_[best_rank], first_merge_id + static_cast<std::int32_t>(best_rank));
    }
    return seq;
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const
{
    std::vector<std::int32_t> out{kBos};
    for (auto chunk : pretokenize(text)) {
        auto ids = encode_chunk(chunk);
        out.insert(out.end(), ids.begin(), ids.end());
    }
    out.push_back(kEos);
    return out;
}

std::string Tokenizer::decode(std::span<const std::int32_t> tokens) const
{
    std::string out;
    for (auto t : tokens) {
        if (t == kEos) break;
        if (t == kPad || t == kBos) continue;
        if (t == kUnk) {
            out += "\xEF\xBF\xBD";
            continue;
        }
        if (t < 0 || static_cast<std::size_t>(t) >= pieces_.size()) throw ContractError("tokenizer: id out of range");
        out += pieces_[static_cast<std::size_t>(t)];
    }
    return out;
}

nlohmann::json Tokenizer::to_json() const
{
    nlohmann::json merges = nlohmann::json::array();
    for (const auto& [a, b] : merges_) merges.push_back({a, b});
    return {{"bytes", bytes_}, {"merges", merges}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j)
{
    Tokenizer tok;
    tok.bytes_ = j.at("bytes").get<std::vector<std::uint8_t>>();
    for (const auto& m : j.at("merges")) tok.merges_.emplace_back(m.at(0).get<std::int32_t>(), m.at(1).get<std::int32_t>());
    tok.rebuild();
    return tok;
}

std::vector<std::int32_t> encode_truncated(const Tokenizer& tok, std::string_view text, std::size_t max_seq_len)
{
    std::vector<std::int32_t> ids = tok.encode(text);
    if (ids.size() > max_seq_len + 1) {
        ids.resize(max_seq_len + 1);
        ids.back() = Tokenizer::kEos;
    }
    return ids;
}

}  // namespace melreport
