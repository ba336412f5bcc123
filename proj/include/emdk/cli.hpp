#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace emdk {

/// Runs the command-line front end on `args` (program name excluded) and
/// returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace emdk
