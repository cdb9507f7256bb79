#pragma once

#include <ostream>

namespace fsnt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitRuntime = 3;

// Subcommands: validate, preprocess, train, grid, eval, bench, predict, report.
int command_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fsnt::cli
