#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace copush::cli {

enum ExitCode { kOk = 0, kConfigError = 2, kRuntimeError = 3 };

// Entry point of the command-line tool; args excludes the program name.
// Progress goes to `log`, errors to `err`.
int run(const std::vector<std::string>& args, std::ostream& log, std::ostream& err);

}  // namespace copush::cli
