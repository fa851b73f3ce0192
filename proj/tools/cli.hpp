#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace amlhp::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInput = 2,
  kMismatch = 3,
  kRuntime = 4,
};

// Runs one `amlhp` invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace amlhp::cli
