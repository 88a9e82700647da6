#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tripletqa/trainer.hpp"

namespace tqa {

enum class ConfigSource { default_value, file, cli };
std::string_view to_string(ConfigSource s);

// Key-value training configuration with per-key provenance. A higher source
// (cli > file > default) is never overwritten by a lower one.
class ConfigMap {
 public:
  static ConfigMap defaults();

  // Lines of `key = value`; '#' starts a comment. Unknown keys throw ConfigError.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin);
  void set(const std::string& key, const std::string& value, ConfigSource source);
  // Parses "key=value".
  void set_assignment(const std::string& assignment, ConfigSource source);

  const std::string& get(const std::string& key) const;
  ConfigSource source(const std::string& key) const;
  std::vector<std::string> keys() const;
  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  // One line per key: "key = value  # source".
  std::string provenance() const;
  TrainConfig to_train_config() const;

 private:
  struct Entry {
    std::string value;
    ConfigSource source = ConfigSource::default_value;
  };
  std::map<std::string, Entry> entries_;
};

// Every (alpha_qae, alpha_qea, alpha_eaq) combination over `values`, in
// lexicographic order of the value indices.
std::vector<std::array<double, 3>> alpha_grid(const std::vector<double>& values);

// Comma-separated numbers; throws ConfigError on junk.
std::vector<double> parse_number_list(const std::string& text);

}  // namespace tqa
