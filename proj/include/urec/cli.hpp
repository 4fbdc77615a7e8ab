#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace urec::cli {

/// Runs one command line (without the program name). Returns the process
/// exit status: 0 on success, 2 on usage errors, 1 on any other failure.
auto run(std::vector<std::string> args, std::ostream &out, std::ostream &err) -> int;

} // namespace urec::cli
