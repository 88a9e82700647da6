#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tripletqa/corpus.hpp"
#include "tripletqa/evaluator.hpp"
#include "tripletqa/model.hpp"
#include "tripletqa/prompting.hpp"
#include "tripletqa/tokenizer.hpp"

namespace tqa {

enum class GroupKey { doc_length, sentence_count };
std::string_view to_string(GroupKey k);
GroupKey group_key_from_string(std::string_view s);

struct Group {
  std::size_t count = 0;
  double mean_key = 0.0;
  double f1 = 0.0;  // percent
  std::vector<std::string> ids;
};

struct GroupedReport {
  GroupKey key = GroupKey::doc_length;
  std::vector<Group> groups;  // four quartile groups, ascending key

  std::string to_json() const;
  // Plot-ready columns: mean key, F1.
  std::string to_tsv() const;
};

// Quartile split by (key, id); every record needs an f1 value.
GroupedReport grouped_f1(const std::vector<ExampleRecord>& records, GroupKey key);

struct CorrelationBin {
  std::size_t count = 0;
  double qea = 0.0, qae = 0.0, eaq = 0.0;  // percent
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  bool degenerate = false;  // x had no spread; slope reported as 0
};

struct CorrelationReport {
  std::size_t requested_bins = 0;
  bool reduced = false;
  std::vector<CorrelationBin> bins;
  LinearFit qea_qae, qea_eaq, qae_eaq;  // y on x, x named first

  std::string to_json() const;
  std::string to_tsv() const;
};

// Ordinary least squares of y on x.
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Records sorted by (QEA F1, id) and cut into equal-size bins. QAE F1 is the
// record's evidence F1 and EAQ F1 its restoration F1.
CorrelationReport correlation(const std::vector<ExampleRecord>& records, std::size_t bins = 50);

struct HallucinationReport {
  std::size_t examples = 0;
  std::size_t question_correct = 0;
  std::size_t question_wrong = 0;
  double p_question = 0.0;                           // P(Y_{A|Q} = Y)
  std::optional<double> p_document_given_correct;    // P(Y_{A|Q,D} = Y | Y_{A|Q} = Y)
  std::optional<double> p_document_given_wrong;      // P(Y_{A|Q,D} = Y | Y_{A|Q} != Y)

  std::string to_json() const;  // undefined conditionals are the string "undefined"
  std::string to_tsv() const;
};

// Two greedy generations per example scored by exact match: question only
// (empty document) and question plus document, both with the QA_PLAIN template.
HallucinationReport hallucination_probe(const CausalLm& lm, const Tokenizer& tok,
                                        const std::vector<TripletExample>& corpus, const TemplateSet& templates,
                                        std::size_t max_len, std::size_t max_new = 32);
// Same statistics from precomputed correctness flags.
HallucinationReport hallucination_from_flags(const std::vector<bool>& question_only,
                                             const std::vector<bool>& with_document);

struct AttentionLayer {
  std::size_t layer = 0;
  double qea_document = 0.0;  // answer tokens -> document tokens
  double qea_evidence = 0.0;  // answer tokens -> evidence tokens
  double eaq_evidence = 0.0;  // question tokens -> evidence tokens
  double eaq_answer = 0.0;    // question tokens -> answer tokens
};

struct AttentionReport {
  std::vector<AttentionLayer> layers;
  std::size_t qea_instances = 0;
  std::size_t eaq_instances = 0;

  std::string to_json() const;
  std::string to_tsv() const;
};

// Teacher-forced QEA and EAQ renderings with attention capture. For each layer
// the head-averaged attention row of every target token is summed over the
// key positions of a segment; values are then averaged over target tokens and
// instances. Examples without evidence contribute to QEA only.
AttentionReport attention_stats(const CausalLm& lm, const Tokenizer& tok, const std::vector<TripletExample>& corpus,
                                const TemplateSet& templates, std::size_t max_len);

}  // namespace tqa
