#include "tripletqa/evaluator.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "tripletqa/errors.hpp"

namespace tqa {

using nlohmann::json;

namespace {

std::vector<std::string> normalized_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && cur != "a" && cur != "an" && cur != "the") out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (c < 128 && std::ispunct(c)) continue;
    if (c < 128 && std::isspace(c)) {
      flush();
      continue;
    }
    cur.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
  }
  flush();
  return out;
}

double f1_tokens(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
  if (pred.empty() || ref.empty()) return pred.empty() && ref.empty() ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  std::size_t same = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++same;
    }
  }
  // Harmonic mean of precision and recall, reduced to a single division.
  return 2.0 * static_cast<double>(same) / static_cast<double>(pred.size() + ref.size());
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> get_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::optional<double> percent_mean(const std::vector<ExampleRecord>& records,
                                   std::optional<double> ExampleRecord::*field) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : records) {
    if (r.*field) {
      s += *(r.*field);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return 100.0 * s / static_cast<double>(n);
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& t : normalized_tokens(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

int exact_match(std::string_view pred, const std::vector<std::string>& references) {
  if (references.empty()) throw DataError("exact_match: no references");
  const auto p = normalize_answer(pred);
  for (const auto& r : references) {
    if (normalize_answer(r) == p) return 1;
  }
  return 0;
}

double token_f1(std::string_view pred, std::string_view reference) {
  return f1_tokens(normalized_tokens(pred), normalized_tokens(reference));
}

double token_f1(std::string_view pred, const std::vector<std::string>& references) {
  if (references.empty()) throw DataError("token_f1: no references");
  const auto p = normalized_tokens(pred);
  double best = 0.0;
  for (const auto& r : references) best = std::max(best, f1_tokens(p, normalized_tokens(r)));
  return best;
}

double evidence_f1(std::string_view pred, std::string_view gold) {
  auto g = normalized_tokens(gold);
  if (g.empty()) throw DataError("evidence_f1: empty gold evidence");
  return f1_tokens(normalized_tokens(pred), g);
}

std::string_view to_string(EvalTask t) {
  switch (t) {
    case EvalTask::qa: return "qa";
    case EvalTask::evidence: return "evidence";
    case EvalTask::qea: return "qea";
    case EvalTask::restore: return "restore";
  }
  return "qa";
}

EvalTask eval_task_from_string(std::string_view s) {
  if (s == "qa") return EvalTask::qa;
  if (s == "evidence") return EvalTask::evidence;
  if (s == "qea") return EvalTask::qea;
  if (s == "restore") return EvalTask::restore;
  throw ConfigError("unknown evaluation task '" + std::string(s) + "'");
}

std::vector<EvalTask> parse_eval_tasks(const std::string& text) {
  std::vector<EvalTask> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    auto t = eval_task_from_string(part);
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  if (out.empty()) throw ConfigError("no evaluation tasks given");
  return out;
}

std::string generate_text(const CausalLm& lm, const Tokenizer& tok, Task task, const SlotContents& contents,
                          const TemplateSet& templates, std::size_t max_len, std::size_t max_new) {
  const std::size_t len = std::min(max_len, lm.max_positions());
  const std::size_t reserve = std::min(max_new, len / 2);
  auto prompt = render_prompt(task, contents, tok, len, reserve, templates);
  auto ids = generate(lm, prompt.token_ids, max_new, tok.eos());
  return tok.decode(ids);
}

EvalReport evaluate(const CausalLm& lm, const Tokenizer& tok, const std::vector<TripletExample>& corpus,
                    const TemplateSet& templates, const EvalOptions& options) {
  EvalReport report;
  report.tasks = options.tasks;
  report.with_evidence = options.with_evidence;
  report.examples = corpus.size();
  auto wants = [&](EvalTask t) {
    return std::find(options.tasks.begin(), options.tasks.end(), t) != options.tasks.end();
  };

  for (const auto& ex : corpus) {
    ExampleRecord rec;
    rec.id = ex.id;
    rec.doc_length = document_token_length(ex.document);
    rec.sentence_count = ex.document.sentences.size();
    const auto gold = slot_contents(ex);
    const auto gold_evidence = ex.evidence_text();

    auto predict = [&](const char* label, Task task, const SlotContents& c, std::size_t max_new,
                       std::optional<double>& score, auto scorer) {
      try {
        auto text = generate_text(lm, tok, task, c, templates, options.max_len, max_new);
        report.predictions.push_back({ex.id, label, text, normalize_answer(text)});
        score = scorer(text);
        return std::optional<std::string>(text);
      } catch (const Error& e) {
        rec.errors.push_back(std::string(label) + ": " + e.what());
        ++report.failures;
        score = 0.0;
        return std::optional<std::string>();
      }
    };

    if (wants(EvalTask::qa)) {
      auto answer_f1 = [&](const std::string& t) { return token_f1(t, ex.answers); };
      SlotContents c = gold;
      c.evidence.clear();
      c.answer.clear();
      std::optional<std::string> text;
      if (options.with_evidence) {
        std::optional<double> unused;
        auto ev = predict("qa_evidence", Task::qae, c, options.max_evidence_tokens, unused,
                          [](const std::string&) { return 0.0; });
        if (ev) {
          c.evidence = *ev;
          text = predict("qa", Task::qea, c, options.max_answer_tokens, rec.f1, answer_f1);
        } else {
          rec.f1 = 0.0;
        }
      } else {
        text = predict("qa", Task::qa_plain, c, options.max_answer_tokens, rec.f1, answer_f1);
      }
      rec.em = text ? static_cast<double>(exact_match(*text, ex.answers)) : 0.0;
    }
    if (wants(EvalTask::evidence)) {
      if (gold_evidence.empty() || normalize_answer(gold_evidence).empty()) {
        ++report.evidence_excluded;
      } else {
        SlotContents c = gold;
        c.evidence.clear();
        predict("evidence", Task::qae, c, options.max_evidence_tokens, rec.evidence_f1,
                [&](const std::string& t) { return evidence_f1(t, gold_evidence); });
      }
    }
    if (wants(EvalTask::qea)) {
      SlotContents c = gold;
      c.answer.clear();
      predict("qea", Task::qea, c, options.max_answer_tokens, rec.qea_f1,
              [&](const std::string& t) { return token_f1(t, ex.answers); });
    }
    if (wants(EvalTask::restore)) {
      if (gold_evidence.empty()) {
        rec.errors.push_back("restore: no gold evidence");
      } else {
        SlotContents c = gold;
        c.question.clear();
        if (!templates.eaq_include_document()) c.document.clear();
        predict("restore", Task::eaq, c, options.max_question_tokens, rec.eaq_f1,
                [&](const std::string& t) { return token_f1(t, ex.question); });
      }
    }
    report.records.push_back(std::move(rec));
  }

  report.em = percent_mean(report.records, &ExampleRecord::em);
  report.f1 = percent_mean(report.records, &ExampleRecord::f1);
  report.evidence_f1 = percent_mean(report.records, &ExampleRecord::evidence_f1);
  report.qea_f1 = percent_mean(report.records, &ExampleRecord::qea_f1);
  report.eaq_f1 = percent_mean(report.records, &ExampleRecord::eaq_f1);
  return report;
}

std::string EvalReport::to_json() const {
  json j;
  j["config_hash"] = config_hash;
  std::vector<std::string> names;
  for (auto t : tasks) names.emplace_back(to_string(t));
  j["tasks"] = names;
  j["with_evidence"] = with_evidence;
  j["examples"] = examples;
  j["em"] = opt(em);
  j["f1"] = opt(f1);
  j["evidence_f1"] = opt(evidence_f1);
  j["evidence_excluded"] = evidence_excluded;
  j["qea_f1"] = opt(qea_f1);
  j["eaq_f1"] = opt(eaq_f1);
  j["failures"] = failures;
  return j.dump(2);
}

std::string record_to_json(const ExampleRecord& r) {
  json j;
  j["id"] = r.id;
  j["em"] = opt(r.em);
  j["f1"] = opt(r.f1);
  j["evidence_f1"] = opt(r.evidence_f1);
  j["qea_f1"] = opt(r.qea_f1);
  j["eaq_f1"] = opt(r.eaq_f1);
  j["doc_length"] = r.doc_length;
  j["sentence_count"] = r.sentence_count;
  j["errors"] = r.errors;
  return j.dump();
}

ExampleRecord record_from_json(const std::string& line) {
  try {
    auto j = json::parse(line);
    ExampleRecord r;
    r.id = j.at("id").get<std::string>();
    r.em = get_opt(j, "em");
    r.f1 = get_opt(j, "f1");
    r.evidence_f1 = get_opt(j, "evidence_f1");
    r.qea_f1 = get_opt(j, "qea_f1");
    r.eaq_f1 = get_opt(j, "eaq_f1");
    r.doc_length = j.at("doc_length").get<std::size_t>();
    r.sentence_count = j.at("sentence_count").get<std::size_t>();
    if (j.contains("errors")) r.errors = j.at("errors").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad evaluation record: ") + e.what());
  }
}

std::vector<ExampleRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<ExampleRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(record_from_json(line));
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<ExampleRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r) << '\n';
}

void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : predictions) out << json{{"id", p.id}, {"task", p.task}, {"text", p.text}}.dump() << '\n';
}

}  // namespace tqa
