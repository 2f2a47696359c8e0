#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace melreport::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::vector<std::string> subcommands();

}  // namespace melreport::cli
