#pragma once

namespace adsc {

// Entry point for the `adsc` binary: parses argv, dispatches to the
// subcommands, and maps errors to exit codes (0 success, 1 runtime
// failure, 2 invalid configuration or infeasible budget).
int cli_main(int argc, char** argv);

}  // namespace adsc
