#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qb::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kIo = 3,
  kCodec = 4,
  kData = 5,
};

// Runs one command. args excludes the program name. Results go to out;
// the resolved configuration, progress and errors go to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qb::cli
