#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tqa {

enum class AnswerType { extractive, abstractive, yes_no, unanswerable };

std::string_view to_string(AnswerType t);
AnswerType answer_type_from_string(std::string_view s);

struct Document {
  std::string id;
  std::vector<std::string> sentences;  // position i+1 is sentences[i]
};

// One evidence-annotated question. Construct through make_example so the
// invariants hold; fields are not modified afterwards.
struct TripletExample {
  std::string id;
  Document document;
  std::string question;
  std::vector<int> evidence_indices;  // 1-based, sorted, unique
  std::vector<std::string> answers;   // references; never empty
  AnswerType answer_type = AnswerType::extractive;

  // Indexed sentences in document order, joined by single spaces.
  std::string evidence_text() const;
};

// Validates and normalizes (sorts and dedups evidence indices).
// Throws DataError naming the record when an invariant is violated.
TripletExample make_example(std::string id, Document document, std::string question,
                            std::vector<int> evidence_indices, std::vector<std::string> answers,
                            AnswerType answer_type);

struct RejectedRecord {
  std::string record_id;
  std::string reason;
};

struct LoadResult {
  std::vector<TripletExample> examples;
  std::vector<RejectedRecord> rejected;
  std::size_t skipped_no_answer = 0;
  std::vector<std::string> missing_evidence;  // ids loaded with an empty evidence set
};

struct MultircOptions {
  // Emit all correct options as one "A, B" reference instead of separate references.
  bool join_answers = false;
  // Base of the `sentences_used` indices in the source file.
  int evidence_base = 0;
};

// MultiRC release format: {"data": [{"id", "paragraph": {"text", "questions": [...]}}]}
// with "<b>Sent N: </b>" sentence markers and per-question "sentences_used".
LoadResult load_multirc(const std::filesystem::path& path, const MultircOptions& options = {});

// QASPER release format: {paper_id: {"abstract", "full_text", "qas"}}. Paragraphs
// (abstract first) are the document units, since QASPER evidence is annotated
// at paragraph granularity.
LoadResult load_qasper(const std::filesystem::path& path);

// Canonical line-delimited record format.
std::string to_canonical_line(const TripletExample& ex);
TripletExample from_canonical_line(std::string_view line);
std::vector<TripletExample> read_canonical(const std::filesystem::path& path);
void write_canonical(const std::filesystem::path& path, const std::vector<TripletExample>& examples);

std::size_t document_token_length(const Document& doc);

// Stable quartile split of items sorted by (key, id); group sizes differ by at most one,
// earlier groups take the remainder.
std::array<std::vector<std::size_t>, 4> quartile_groups(const std::vector<double>& keys,
                                                        const std::vector<std::string>& ids);

// Splits `n` sorted items into `bins` contiguous groups whose sizes differ by at most one.
std::vector<std::pair<std::size_t, std::size_t>> equal_size_bins(std::size_t n, std::size_t bins);

struct Summary {
  double mean = 0;
  double q1 = 0;
  double median = 0;
  double q3 = 0;
};

struct CorpusStats {
  std::size_t example_count = 0;
  Summary doc_length;      // tokens
  Summary sentence_count;
  std::size_t missing_evidence = 0;
  std::array<std::vector<std::string>, 4> length_groups;    // example ids per quartile
  std::array<std::vector<std::string>, 4> sentence_groups;
};

CorpusStats compute_stats(const std::vector<TripletExample>& corpus);

}  // namespace tqa
