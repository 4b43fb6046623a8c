#pragma once

#include <ostream>

namespace arena {

// Exit codes of the arena command.
enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,       // bad arguments or invalid config
  exit_server = 2,      // the server answered with an error
  exit_connection = 3,  // no answer from the server
  exit_digest = 4,      // downloaded bytes do not match the manifest digest
};

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace arena
