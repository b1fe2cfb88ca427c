#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace martvae::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one command line (without the program name). Exit codes: 0 success, 1 usage error,
/// 2 data or validation error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace martvae::cli
