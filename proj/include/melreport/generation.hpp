#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "melreport/model.hpp"
#include "melreport/tokenizer.hpp"

namespace melreport {

enum class DecodeStrategy { greedy, sample, beam };

std::string to_string(DecodeStrategy s);
DecodeStrategy parse_decode_strategy(std::string_view text);

struct DecodeOptions {
    DecodeStrategy strategy = DecodeStrategy::greedy;
    std::size_t max_len = 128;  // generated tokens, EOS included
    double temperature = 1.0;   // sample only
    std::uint64_t seed = 0;     // sample only
    std::size_t beam_width = 4; // beam only, 1..4

    void validate(std::size_t max_seq_len) const;
};

struct GeneratedReport {
    std::string text;
    std::vector<std::int32_t> tokens;  // generated ids, without BOS and EOS
    bool stopped_at_eos = false;
    bool truncated = false;  // hit max_len before EOS
};

// Decodes from BOS, conditioned only on the image embeddings through
// cross-attention. The full prefix is re-run at every step.
GeneratedReport generate(CocaModel<float>& model, const CaseEmbedding<float>& embedding, const Tokenizer& tokenizer,
                         const DecodeOptions& opts);

// Number of distinct word n-grams occurring at least twice. Words are
// lowercased and stripped of punctuation.
std::size_t detect_repetitions(std::string_view text, std::size_t n = 5);

}  // namespace melreport
