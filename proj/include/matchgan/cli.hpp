#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace matchgan::cli {

// Exit statuses.
inline constexpr int kOk = 0;
inline constexpr int kValidationError = 1;
inline constexpr int kRuntimeFailure = 2;

// Environment variable that replaces experiment.output_dir (an explicit
// --output flag still wins).
inline constexpr const char* kOutputDirEnv = "MATCHGAN_OUTPUT_DIR";

// Entry point for the `matchgan` tool. `args` excludes the program name.
// Subcommands: make-synthetic, train, evaluate, sample, interpolate, nn,
// inspect-schedule.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace matchgan::cli
