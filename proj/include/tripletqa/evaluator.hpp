#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tripletqa/corpus.hpp"
#include "tripletqa/model.hpp"
#include "tripletqa/prompting.hpp"
#include "tripletqa/tokenizer.hpp"

namespace tqa {

// Lowercase, delete ASCII punctuation, drop the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view text);

// 1 iff the normalized prediction equals some normalized reference. Throws
// DataError on an empty reference list.
int exact_match(std::string_view pred, const std::vector<std::string>& references);
// Bag-of-token F1 on normalized text, max over references. Two empty token
// lists score 1.
double token_f1(std::string_view pred, std::string_view reference);
double token_f1(std::string_view pred, const std::vector<std::string>& references);
// Token F1 against gold evidence text; throws DataError when the gold text is empty.
double evidence_f1(std::string_view pred, std::string_view gold);

enum class EvalTask { qa, evidence, qea, restore };
std::string_view to_string(EvalTask t);
EvalTask eval_task_from_string(std::string_view s);
// "qa,evidence" style lists.
std::vector<EvalTask> parse_eval_tasks(const std::string& text);

struct EvalOptions {
  std::vector<EvalTask> tasks = {EvalTask::qa};
  // Answer via generated evidence (QAE prompt, then QEA) instead of QA_PLAIN.
  bool with_evidence = false;
  std::size_t max_len = 512;
  std::size_t max_answer_tokens = 32;
  std::size_t max_evidence_tokens = 128;
  std::size_t max_question_tokens = 48;
};

struct Prediction {
  std::string id;
  std::string task;
  std::string text;
  std::string normalized;
};

// Scores are in [0, 1]; a missing value means the task was not run or the
// example was excluded.
struct ExampleRecord {
  std::string id;
  std::optional<double> em, f1, evidence_f1, qea_f1, eaq_f1;
  std::size_t doc_length = 0;
  std::size_t sentence_count = 0;
  std::vector<std::string> errors;
};

// Corpus metrics in percent; each is the mean of the matching record field.
struct EvalReport {
  std::optional<double> em, f1, evidence_f1, qea_f1, eaq_f1;
  std::size_t examples = 0;
  std::size_t evidence_excluded = 0;
  std::size_t failures = 0;
  std::string config_hash;
  std::vector<EvalTask> tasks;
  bool with_evidence = false;
  std::vector<ExampleRecord> records;
  std::vector<Prediction> predictions;

  std::string to_json() const;
};

EvalReport evaluate(const CausalLm& lm, const Tokenizer& tok, const std::vector<TripletExample>& corpus,
                    const TemplateSet& templates, const EvalOptions& options);

// Greedy continuation of a prompt, decoded to text.
std::string generate_text(const CausalLm& lm, const Tokenizer& tok, Task task, const SlotContents& contents,
                          const TemplateSet& templates, std::size_t max_len, std::size_t max_new);

std::string record_to_json(const ExampleRecord& r);
ExampleRecord record_from_json(const std::string& line);
std::vector<ExampleRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<ExampleRecord>& records);
void write_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);

}  // namespace tqa
