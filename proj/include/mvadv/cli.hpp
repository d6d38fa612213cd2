#pragma once

#include <ostream>

namespace mvadv {

/// Command-line entry point. Returns 0 on success, 2 for usage errors and 1
/// for runtime failures (reported as one line on `err`).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mvadv
