#pragma once

#include <stdexcept>
#include <string>

namespace tqa {

// Error categories double as CLI exit-code classes.
enum class ErrorCategory { usage, config, io, data, training, internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorCategory::data, what) {}
};

struct TrainingError : Error {
  TrainingError(const std::string& what, std::string dump)
      : Error(ErrorCategory::training, what), dump_(std::move(dump)) {}
  // Structured dump of the instance that produced the failure.
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

const char* category_name(ErrorCategory c);

}  // namespace tqa
