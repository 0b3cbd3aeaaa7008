#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace gmgan {

/// Runs the command line `args` (args[0] is the program name) and returns the
/// process exit code: 0 ok, 1 usage or config, 2 data, 3 numeric, 4 verification.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gmgan
