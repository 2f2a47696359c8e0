#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace melreport {

// Byte-pair-merge tokenizer. Ids 0..3 are PAD, BOS, EOS, UNK; then one id per
// byte seen in training text (ascending byte value); then one id per merge.
// Merges never cross a word boundary: text is pre-split into chunks that are
// a run of spaces followed by a run of non-spaces.
class Tokenizer {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kBos = 1;
    static constexpr std::int32_t kEos = 2;
    static constexpr std::int32_t kUnk = 3;
    static constexpr std::size_t kNumSpecial = 4;

    // Greedy training: repeatedly merge the most frequent adjacent pair
    // (ties → smallest id pair) until vocab_size is reached or no adjacent
    // pair is left.
    static Tokenizer train(std::span<const std::string> reports, std::size_t vocab_size);

    // [BOS, ..., EOS]
    [[nodiscard]] std::vector<std::int32_t> encode(std::string_view text) const;
    // Special tokens are skipped; decoding stops at the first EOS.
    [[nodiscard]] std::string decode(std::span<const std::int32_t> tokens) const;

    [[nodiscard]] std::size_t vocab_size() const noexcept { return pieces_.size(); }
    [[nodiscard]] const std::vector<std::pair<std::int32_t, std::int32_t>>& merges() const noexcept { return merges_; }
    [[nodiscard]] const std::string& piece(std::int32_t id) const { return pieces_.at(static_cast<std::size_t>(id)); }

    [[nodiscard]] nlohmann::json to_json() const;
    static Tokenizer from_json(const nlohmann::json& j);

    bool operator==(const Tokenizer& other) const { return bytes_ == other.bytes_ && merges_ == other.merges_; }

private:
    void rebuild();
    [[nodiscard]] std::vector<std::int32_t> encode_chunk(std::string_view chunk) const;

    std::vector<std::uint8_t> bytes_;                              // byte alphabet
    std::vector<std::pair<std::int32_t, std::int32_t>> merges_;    // in rank order
    std::vector<std::string> pieces_;                              // id → bytes
    std::vector<std::int32_t> byte_to_id_;                         // 256 entries, kUnk if absent
    std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> merge_rank_;
};

// Splits into chunks of leading spaces + non-space run.
std::vector<std::string_view> pretokenize(std::string_view text);

// encode() cut to at most max_seq_len + 1 ids, keeping EOS last.
std::vector<std::int32_t> encode_truncated(const Tokenizer& tok, std::string_view text, std::size_t max_seq_len);

}  // namespace melreport
