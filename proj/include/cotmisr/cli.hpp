#pragma once

#include <ostream>

namespace cotmisr::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, data_error = 3, numerical_error = 4 };

// Entry point of the cotmisr tool; subcommands train, eval, infer, params,
// ablate and synth. Output goes to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cotmisr::cli
