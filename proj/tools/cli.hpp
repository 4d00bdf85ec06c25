#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bfuse::cli {

/// Exit codes of the bfuse executable.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kStore = 3,
  kNumerical = 4,
};

/// Parses `args` (without the program name) and runs one subcommand. Reports
/// go to the --out path, or to `out` when none is given; diagnostics go to
/// `err`.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace bfuse::cli
