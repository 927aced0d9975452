#pragma once

#include <ostream>

namespace promptlab {

// Exit codes: 0 success, 1 assumption violation (or property violations),
// 2 configuration and every other error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace promptlab
