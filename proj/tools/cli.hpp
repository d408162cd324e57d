#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace eifnet::cli {

/// Exit codes: 0 success, 1 a check failed (gradient error, divergence,
/// non-finite output), 2 bad usage or invalid input.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

/// Runs one invocation; args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace eifnet::cli
