#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "melreport/grad_check.hpp"

namespace melreport {

// Seeded tiny-config gradient checks of the model components.
enum class CheckedComponent { contrastive, captioning, attention_pool, perceiver_block, unimodal_block, multimodal_block };

std::string to_string(CheckedComponent c);
CheckedComponent parse_checked_component(std::string_view text);
std::vector<CheckedComponent> all_checked_components();

GradCheckReport check_component(CheckedComponent c, Precision precision, std::uint64_t seed = 0);

}  // namespace melreport
