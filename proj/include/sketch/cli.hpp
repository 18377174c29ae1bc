// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>

namespace sketch {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,      // unexpected error
  kExitUsage = 2,        // bad flags or arguments
  kExitValidation = 3,   // invalid values, configs or templates
  kExitIo = 4,           // unreadable or malformed files
  kExitIngestion = 5,    // manifest records rejected
  kExitState = 6,        // misuse of model state
  kExitNumeric = 7,      // non-finite training
  kExitBackend = 8,      // generator failure
  kExitDegenerate = 9,   // zero-sum embedding combination
};

/// Entry point of `sketchctl`. Subcommands: dataset, train, ablate, refine,
/// eval, serve.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sketch
