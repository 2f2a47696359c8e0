#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "melreport/corpus.hpp"

namespace melreport {

// Parameters of the synthetic stand-in corpus.
struct SynthSpec {
    std::size_t n_cases = 64;
    std::size_t n_attributes = 6;  // binary visual attributes, 4..8
    double common_fraction = 0.8;
    double noise_scale = 0.1;  // relative to unit cluster separation
    std::size_t feature_dim = 32;
    std::size_t min_tiles = 24;
    std::size_t max_tiles = 48;
    std::size_t max_slides = 3;
    double repeat_patient_prob = 0.25;  // chance a case reuses an earlier patient
    std::uint64_t grammar_seed = 0;     // picks phrase variants

    void validate() const;
};

struct LesionAttributes {
    DiagnosisGroup subtype = DiagnosisGroup::common_nevus;
    std::vector<bool> active;
    bool operator==(const LesionAttributes&) const = default;
};

// Fixed sentence grammar: one subtype sentence, extra architecture
// sentences for non-common lesions, one sentence per active attribute, and
// a conclusion. Pure function of (subtype, attributes, grammar_seed).
std::string render_report(const LesionAttributes& attrs, std::uint64_t grammar_seed);

struct SynthCorpus {
    Corpus corpus;
    std::vector<LesionAttributes> attributes;  // parallel to corpus.cases
};

// Deterministic in (spec, seed). Attribute combinations are drawn without
// replacement per subtype until exhausted, so small corpora have distinct
// reports.
SynthCorpus synth_generate(const SynthSpec& spec, std::uint64_t seed);

}  // namespace melreport
