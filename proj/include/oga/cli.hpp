#pragma once

#include <string>
#include <vector>

namespace oga {

/// Full command-line entry point (subcommands: pretrain, similarity, select,
/// attack, eval, compare-fusion, render). Returns the process exit code.
int run_cli(const std::vector<std::string>& args);

}  // namespace oga
