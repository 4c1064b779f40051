#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sfcap {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

// Subcommands: gen-corpus, train, caption, trace, eval. `args` excludes the
// program name. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sfcap
