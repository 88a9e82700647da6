#include "tripletqa/config.hpp"

#include <fstream>
#include <sstream>

#include "tripletqa/errors.hpp"

namespace tqa {

namespace {

const std::vector<std::pair<std::string, std::string>>& default_entries() {
  static const std::vector<std::pair<std::string, std::string>> d = [] {
    TrainConfig c;
    const auto& t = c.templates;
    return std::vector<std::pair<std::string, std::string>>{
        {"layers", "2"},
        {"heads", "2"},
        {"dim", "64"},
        {"max_positions", "512"},
        {"adapter_tokens", "8"},
        {"lora_rank", "8"},
        {"lora_alpha", "16"},
        {"lora_targets", "q,v"},
        {"mode", "adapters"},
        {"alpha_qae", "0.3"},
        {"alpha_qea", "1.0"},
        {"alpha_eaq", "0.3"},
        {"alpha_kl", "1.0"},
        {"use_qae", "true"},
        {"use_eaq", "true"},
        {"use_kl", "true"},
        {"ablation", "none"},
        {"kl_direction", "forward"},
        {"kl_teacher_stopgrad", "false"},
        {"lr", "3e-5"},
        {"beta1", "0.9"},
        {"beta2", "0.999"},
        {"eps", "1e-8"},
        {"weight_decay", "0.01"},
        {"clip_norm", "1.0"},
        {"batch_size", "8"},
        {"epochs", "3"},
        {"max_steps", "0"},
        {"max_len", "512"},
        {"seed", "0"},
        {"eaq_include_document", "false"},
        {"instruction.qae", t.get(Task::qae).instruction},
        {"instruction.qea", t.get(Task::qea).instruction},
        {"instruction.eaq", t.get(Task::eaq).instruction},
        {"instruction.qa_plain", t.get(Task::qa_plain).instruction},
    };
  }();
  return d;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      auto x = std::stoull(v, &used);
      if (used == v.size()) return x;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

LoraTargets to_targets(const std::string& v) {
  LoraTargets t{false, false, false, false};
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part == "q") t.q = true;
    else if (part == "k") t.k = true;
    else if (part == "v") t.v = true;
    else if (part == "o") t.o = true;
    else throw ConfigError("key 'lora_targets': unknown target '" + part + "'");
  }
  if (t.count() == 0) throw ConfigError("key 'lora_targets': no targets");
  return t;
}

template <typename F>
auto wrap(const std::string& key, F f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

}  // namespace

std::string_view to_string(ConfigSource s) {
  switch (s) {
    case ConfigSource::default_value: return "default";
    case ConfigSource::file: return "file";
    case ConfigSource::cli: return "cli";
  }
  return "default";
}

ConfigMap ConfigMap::defaults() {
  ConfigMap m;
  for (const auto& [k, v] : default_entries()) m.entries_[k] = Entry{v, ConfigSource::default_value};
  return m;
}

void ConfigMap::set(const std::string& key, const std::string& value, ConfigSource source) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  if (static_cast<int>(source) < static_cast<int>(it->second.source)) return;
  it->second = Entry{value, source};
}

void ConfigMap::set_assignment(const std::string& assignment, ConfigSource source) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), source);
}

void ConfigMap::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set_assignment(line, ConfigSource::file);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void ConfigMap::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

const std::string& ConfigMap::get(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.value;
}

ConfigSource ConfigMap::source(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.source;
}

std::vector<std::string> ConfigMap::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) out.push_back(k);
  return out;
}

std::string ConfigMap::provenance() const {
  std::string out;
  for (const auto& [k, e] : entries_) out += k + " = " + e.value + "  # " + std::string(to_string(e.source)) + "\n";
  return out;
}

TrainConfig ConfigMap::to_train_config() const {
  TrainConfig c;
  auto u = [&](const char* k) { return to_uint(k, get(k)); };
  auto d = [&](const char* k) { return to_double(k, get(k)); };
  auto b = [&](const char* k) { return to_bool(k, get(k)); };

  c.mode = wrap("mode", [&] { return adaptation_mode_from_string(get("mode")); });
  c.backbone.layers = u("layers");
  c.backbone.heads = u("heads");
  c.backbone.dim = u("dim");
  c.backbone.max_positions = u("max_positions");
  c.backbone.adapter_tokens = c.mode == AdaptationMode::lora ? 0 : u("adapter_tokens");
  c.backbone.lora_rank = c.mode == AdaptationMode::lora ? u("lora_rank") : 0;
  c.backbone.lora_alpha = d("lora_alpha");
  c.backbone.lora_targets = to_targets(get("lora_targets"));

  c.weights.qae = d("alpha_qae");
  c.weights.qea = d("alpha_qea");
  c.weights.eaq = d("alpha_eaq");
  c.weights.kl = d("alpha_kl");
  c.weights.use_qae = b("use_qae");
  c.weights.use_eaq = b("use_eaq");
  c.weights.use_kl = b("use_kl");
  c.ablation = wrap("ablation", [&] { return ablation_from_string(get("ablation")); });
  c.kl.direction = wrap("kl_direction", [&] { return kl_direction_from_string(get("kl_direction")); });
  c.kl.teacher_stopgrad = b("kl_teacher_stopgrad");

  c.optimizer.lr = d("lr");
  c.optimizer.beta1 = d("beta1");
  c.optimizer.beta2 = d("beta2");
  c.optimizer.eps = d("eps");
  c.optimizer.weight_decay = d("weight_decay");
  c.optimizer.clip_norm = d("clip_norm");
  c.batch_size = u("batch_size");
  c.epochs = u("epochs");
  c.max_steps = u("max_steps");
  c.max_len = u("max_len");
  c.seed = u("seed");

  c.templates.set_eaq_include_document(b("eaq_include_document"));
  c.templates.set_instruction(Task::qae, get("instruction.qae"));
  c.templates.set_instruction(Task::qea, get("instruction.qea"));
  c.templates.set_instruction(Task::eaq, get("instruction.eaq"));
  c.templates.set_instruction(Task::qa_plain, get("instruction.qa_plain"));
  if (!(c.optimizer.lr > 0.0)) throw ConfigError("key 'lr': learning rate must be positive");
  c.validate();
  return c;
}

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(to_double("list", trim(part)));
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

std::vector<std::array<double, 3>> alpha_grid(const std::vector<double>& values) {
  std::vector<std::array<double, 3>> out;
  for (double a : values)
    for (double b : values)
      for (double c : values) out.push_back({a, b, c});
  return out;
}

}  // namespace tqa
