#pragma once

#include <string>
#include <vector>

namespace softstack::cli {

// Entry point behind the `softstack` binary; exposed so tests can drive the
// commands in-process. Returns the process exit code (0 success, 2 usage /
// config errors, 1 runtime failures).
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);

// "41-100,200-500" -> [(41,100),(200,500)]
std::vector<std::pair<int, int>> parse_length_ranges(const std::string& spec);

} // namespace softstack::cli
