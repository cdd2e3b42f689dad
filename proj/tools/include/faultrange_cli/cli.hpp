#pragma once

#include <ostream>
#include <span>
#include <string>

namespace faultrange::cli {

// Process exit codes; listed in --help.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kIo = 3,
  kFormat = 4,
  kSchema = 5,
  kConfig = 6,
  kShape = 7,
  kTraining = 8,
  kAttribution = 9,
};

/// Runs one subcommand. `args` excludes the program name. Errors are written
/// to `err` as a single line: "error code=<name> exit=<n> message=<text>".
int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);

/// Full help text covering every subcommand.
std::string help_text();

}  // namespace faultrange::cli
