// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mgf/config.hpp"
#include "mgf/datagen.hpp"

namespace mgf {

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitContract = 3,  // shape or contract violation
  kExitNumerical = 4,
  kExitIo = 5,
};

/// Runs one subcommand (`args[0]` is the program name). Errors are
/// reported on `err` and mapped to an ExitCode.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Seed precedence: explicit flag, then MAGICFLOW_SEED, then `fallback`.
std::uint64_t resolve_seed(const std::string& flag, std::uint64_t fallback);

struct RunDatasets {
  Dataset train;
  Dataset test;  // empty when the config has no held-out split
};
/// The datasets a run config describes. Generated data uses streams
/// derived from the run seed (train 1, test 2).
RunDatasets make_datasets(const RunConfig& cfg);

}  // namespace mgf
