#pragma once

namespace fire {

// Subcommands: gen-data, train, register, explain, eval. Returns the process
// exit code; errors print a message naming the offending path or flag.
int run_cli(int argc, const char* const* argv);

}  // namespace fire
