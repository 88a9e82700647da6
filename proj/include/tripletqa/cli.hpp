#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "tripletqa/errors.hpp"

namespace tqa {

// Process exit code for an error category.
int exit_code(ErrorCategory c);

// Runs one subcommand (prepare-data, train, evaluate, analyze, generate,
// sweep). `args` excludes the program name. Errors are reported on `err` as
// "error: category=<name> message=<text>".
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Environment variable naming the default output root when --out is omitted.
inline constexpr const char* kCacheDirEnv = "TRIPLETQA_CACHE_DIR";

}  // namespace tqa
