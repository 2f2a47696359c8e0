#include "melreport/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "melreport/errors.hpp"

namespace melreport {

namespace {

struct AttributePhrases {
    std::array<const char*, 2> variants;
};

// Eight attribute slots, two phrasings each.
constexpr std::array<AttributePhrases, 8> kAttributes{{
    {{"Nests of melanocytes are present at the dermoepidermal junction.",
      "The junctional component consists of regular nests of melanocytes."}},
    {{"There is a dermal component of small monomorphous melanocytes.",
      "In the dermis there are sheets of small uniform melanocytes."}},
    {{"Melanin pigment is present in the superficial part of the lesion.",
      "The lesion contains melanin pigment and melanophages."}},
    {{"The dermal melanocytes extend along adnexal structures in a congenital pattern.",
      "A congenital growth pattern is seen around hair follicles and sweat glands."}},
    {{"A lymphocytic infiltrate is present in the surrounding dermis.",
      "There is a patchy inflammatory infiltrate of lymphocytes."}},
    {{"There is fibrosis in the papillary dermis.",
      "The papillary dermis shows fibrotic changes."}},
    {{"The melanocytes show mild cytonuclear atypia.",
      "Some melanocytes have enlarged nuclei with mild atypia."}},
    {{"Sparse mitotic figures are seen in the dermal component.",
      "A few mitoses are present in the deeper part of the lesion."}},
}};

constexpr std::array<const char*, 2> kCommonOpening{
    "Sections show a benign melanocytic lesion with a regular symmetric architecture.",
    "The excision contains a symmetric and well circumscribed melanocytic lesion."};
constexpr std::array<const char*, 2> kOtherOpening{
    "Sections show a melanocytic lesion with an irregular and asymmetric architecture.",
    "The excision contains an asymmetric melanocytic lesion with irregular growth."};
constexpr std::array<const char*, 3> kOtherArchitecture{
    "The lateral borders of the lesion are poorly circumscribed.",
    "Maturation of the melanocytes towards the base is incomplete.",
    "Single melanocytes are present in suprabasal layers of the epidermis."};
constexpr std::array<const char*, 2> kCommonConclusion{"Conclusion: common nevus, completely excised.",
                                                       "Conclusion: common melanocytic nevus."};
constexpr std::array<const char*, 2> kOtherConclusion{
    "Conclusion: atypical melanocytic lesion with intermediate features, re-excision with a margin is advised.",
    "Conclusion: melanocytic lesion of uncertain malignant potential, a complete excision is recommended."};

std::size_t variant(std::uint64_t grammar_seed, std::size_t slot, std::size_t n_variants)
{
    // splitmix64 of (seed, slot): a fixed pick per slot independent of the case.
    std::uint64_t z = grammar_seed + 0x9E3779B97F4A7C15ULL * (slot + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return static_cast<std::size_t>(z % n_variants);
}

std::string id_with(char prefix, std::size_t n)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%04zu", prefix, n);
    return buf;
}

}  // namespace

void SynthSpec::validate() const
{
    if (n_attributes < 4 || n_attributes > kAttributes.size()) throw ConfigError("synth: n_attributes must be in [4, 8]");
    if (common_fraction < 0.0 || common_fraction > 1.0) throw ConfigError("synth: common_fraction must be in [0, 1]");
    if (noise_scale < 0.0) throw ConfigError("synth: noise_scale must be non-negative");
    if (feature_dim == 0 || feature_dim > 1024) throw ConfigError("synth: feature_dim must be in [1, 1024]");
    if (min_tiles == 0 || max_tiles < min_tiles) throw ConfigError("synth: need 1 <= min_tiles <= max_tiles");
    if (max_slides == 0) throw ConfigError("synth: max_slides must be >= 1");
    if (repeat_patient_prob < 0.0 || repeat_patient_prob >= 1.0) throw ConfigError("synth: repeat_patient_prob must be in [0, 1)");
}

std::string render_report(const LesionAttributes& attrs, std::uint64_t grammar_seed)
{
    const bool common = attrs.subtype == DiagnosisGroup::common_nevus;
    std::string out = common ? kCommonOpening[variant(grammar_seed, 100, 2)] : kOtherOpening[variant(grammar_seed, 101, 2)];
    if (!common)
        for (const char* s : kOtherArchitecture) out += std::string(" ") + s;
    for (std::size_t a = 0; a < attrs.active.size(); ++a)
        if (attrs.active[a]) out += std::string(" ") + kAttributes[a].variants[variant(grammar_seed, a, 2)];
    out += " ";
    out += common ? kCommonConclusion[variant(grammar_seed, 102, 2)] : kOtherConclusion[variant(grammar_seed, 103, 2)];
    return out;
}

SynthCorpus synth_generate(const SynthSpec& spec, std::uint64_t seed)
{
    spec.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t d = spec.feature_dim;
    const std::size_t n_combos = std::size_t{1} << spec.n_attributes;

    // Cluster centres: one per subtype, one per attribute; roughly unit norm,
    // so distinct centres are ~sqrt(2) apart.
    const std::size_t n_centres = 2 + spec.n_attributes;
    std::vector<std::vector<double>> centres(n_centres, std::vector<double>(d));
    for (auto& c : centres)
        for (auto& v : c) v = gauss(rng) / std::sqrt(static_cast<double>(d));

    // Per-subtype decks of attribute combinations, reshuffled when exhausted.
    std::array<std::vector<std::size_t>, 2> decks;
    std::array<std::size_t, 2> deck_pos{n_combos, n_combos};
    auto draw_combo = [&](std::size_t subtype) {
        auto& deck = decks[subtype];
        if (deck_pos[subtype] >= deck.size()) {
            deck.resize(n_combos);
            std::iota(deck.begin(), deck.end(), std::size_t{0});
            std::shuffle(deck.begin(), deck.end(), rng);
            deck_pos[subtype] = 0;
        }
        return deck[deck_pos[subtype]++];
    };

    SynthCorpus out;
    out.corpus.feature_dim = d;
    std::size_t n_patients = 0;
    for (std::size_t i = 0; i < spec.n_cases; ++i) {
        Case c;
        c.case_id = id_with('C', i + 1);
        if (n_patients > 0 && unif(rng) < spec.repeat_patient_prob) {
            c.patient_id = id_with('P', 1 + static_cast<std::size_t>(unif(rng) * static_cast<double>(n_patients)) % n_patients);
        } else {
            c.patient_id = id_with('P', ++n_patients);
        }

        LesionAttributes attrs;
        attrs.subtype = unif(rng) < spec.common_fraction ? DiagnosisGroup::common_nevus : DiagnosisGroup::other;
        const std::size_t subtype_idx = attrs.subtype == DiagnosisGroup::common_nevus ? 0 : 1;
        const std::size_t combo = draw_combo(subtype_idx);
        attrs.active.resize(spec.n_attributes);
        for (std::size_t a = 0; a < spec.n_attributes; ++a) attrs.active[a] = ((combo >> a) & 1U) != 0;
        c.diagnosis_group = attrs.subtype;
        c.report = render_report(attrs, spec.grammar_seed);

        std::vector<std::size_t> components{subtype_idx};
        for (std::size_t a = 0; a < spec.n_attributes; ++a)
            if (attrs.active[a]) components.push_back(2 + a);

        const std::size_t m = spec.min_tiles + static_cast<std::size_t>(rng() % (spec.max_tiles - spec.min_tiles + 1));
        const std::size_t n_slides = std::min<std::size_t>(m, 1 + static_cast<std::size_t>(rng() % spec.max_slides));
        std::size_t tile = 0;
        for (std::size_t s = 0; s < n_slides; ++s) {
            const std::size_t count = (s + 1 == n_slides) ? m - tile : m / n_slides;
            TileFeatureSet set;
            set.slide_id = c.case_id + "_S" + std::to_string(s + 1);
            set.features = Tensor<float>(count, d);
            std::set<TileCoordinate> used;
            for (std::size_t k = 0; k < count; ++k, ++tile) {
                const auto& centre = centres[components[tile % components.size()]];
                for (std::size_t j = 0; j < d; ++j)
                    set.features(k, j) = static_cast<float>(centre[j] + spec.noise_scale * gauss(rng) / std::sqrt(static_cast<double>(d)));
                TileCoordinate tc;
                do {
                    tc = {static_cast<std::int32_t>(rng() % 64), static_cast<std::int32_t>(rng() % 64)};
                } while (!used.insert(tc).second);
                set.coords.push_back(tc);
            }
            c.slides.push_back(std::move(set));
        }
        out.corpus.cases.push_back(std::move(c));
        out.attributes.push_back(std::move(attrs));
    }
    return out;
}

}  // namespace melreport
