#pragma once

namespace cseg {

// Command-line front end: cseg <synth|train|eval|predict|gradcheck|benchmark> [options].
// Returns the process exit code (see ExitCode).
int run_cli(int argc, const char* const* argv);

}  // namespace cseg
