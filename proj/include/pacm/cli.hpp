#pragma once

// Command-line driver. Subcommands: gen-data, train, eval, gradcheck,
// mi-bound, export-hist. Returns 0 on success, 1 on invalid input or a failed
// check of the input, 2 on numeric failure.

#include <ostream>

namespace pacm {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pacm
