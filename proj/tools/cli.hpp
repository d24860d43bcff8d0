#pragma once

#include <iosfwd>

namespace rndf::cli {

/// Entry point behind the `rndf` binary; exposed so tests can drive commands
/// in-process. Exit codes: 0 ok, 1 runtime failure, 2 config error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rndf::cli
