#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace bdlab {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "BDLAB_OUT";

enum ExitCode { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2 };

/// Runs one subcommand; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bdlab
