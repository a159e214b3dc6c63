#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace penning::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kInputError = 2;
inline constexpr int kNotConverged = 3;
inline constexpr int kInvariant = 4;

/// Runs one command line (args[0] is the program name). Human-readable output goes to
/// `out`, diagnostics to `err`; data files go to --out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace penning::cli
