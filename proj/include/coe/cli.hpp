#pragma once

#include <iosfwd>

namespace coe::cli {

enum ExitCode : int {
  kOk = 0,
  kDataError = 1,
  kUsageError = 2,
  kTheoryFailure = 3,
};

/// Entry point of the `coe` tool. Reports go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace coe::cli
