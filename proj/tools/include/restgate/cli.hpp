#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace restgate::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericError = 3 };

// Runs one invocation of the tool. `args` excludes the program name. Normal
// output goes to `out`; diagnostics, including `error[CODE]: message` lines, to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace restgate::cli
