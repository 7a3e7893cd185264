#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace kedit::cli {

inline constexpr const char* kVersion = "0.1.0";

// Runs one subcommand. Returns 0 on success, 1 on a runtime or validation
// failure, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kedit::cli
