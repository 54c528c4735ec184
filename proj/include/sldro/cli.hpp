// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace sldro {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Entry point behind the `sldro` binary. args[0] is the program name.
/// Subcommands: gen-data, train, eval, compare, explain.
int run_cli(const std::vector<std::string>& args);

}  // namespace sldro
