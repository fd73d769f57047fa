#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pedrisk::cli {

enum ExitCode : int { kOk = 0, kUsageError = 1, kDataError = 2, kInternalError = 3 };

// Entry point shared by the executable and the tests. `args[0]` is the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pedrisk::cli
