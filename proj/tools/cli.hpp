#pragma once

#include <iosfwd>

namespace volterra::cli {

// exit codes: 0 ok, 2 config invalid, 3 numerical failure, 4 verdict-gated check failed
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace volterra::cli
