#pragma once

namespace segalign {

enum ExitCode : int { kOk = 0, kUsage = 1, kValidation = 2, kRuntime = 3 };

// Entry point of the segalign tool; returns the process exit code.
int parse_and_dispatch(int argc, const char* const* argv);

}  // namespace segalign
