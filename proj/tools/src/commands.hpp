#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace semtx::cli {

enum ExitCode : int { kSuccess = 0, kUsage = 2, kInput = 3, kNumeric = 4 };

// Runs one command line (without the program name) and returns its exit code.
// Diagnostics go to `err`, short summaries to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace semtx::cli
