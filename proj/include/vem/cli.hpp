#pragma once

#include <string>
#include <vector>

namespace vem::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Entry point of the `vem` binary. Returns 0 on success, 1 on computation
/// errors and 2 on usage, input or validation errors; failures print one JSON
/// line {"error": kind, "message": text} on stderr.
int run(int argc, char** argv);

/// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args);

}  // namespace vem::cli
