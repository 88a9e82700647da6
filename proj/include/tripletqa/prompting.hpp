#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tripletqa/corpus.hpp"
#include "tripletqa/tokenizer.hpp"

namespace tqa {

enum class Task { qae, qea, eaq, qa_plain };
enum class Slot { document, question, evidence, answer };

std::string_view to_string(Task t);
Task task_from_string(std::string_view s);
std::string_view to_string(Slot s);

struct PromptTemplate {
  Task task;
  std::string instruction;
  std::vector<Slot> slot_order;  // target slot last
  Slot target() const { return slot_order.back(); }
};

// The four instruction templates. Instruction wording is swappable through
// the config file; slot orders are fixed per task.
class TemplateSet {
 public:
  static TemplateSet defaults();

  const PromptTemplate& get(Task t) const { return templates_[static_cast<std::size_t>(t)]; }
  void set_instruction(Task t, std::string text);
  bool eaq_include_document() const { return eaq_include_document_; }
  void set_eaq_include_document(bool on);

 private:
  std::array<PromptTemplate, 4> templates_;
  bool eaq_include_document_ = false;
};

struct SegmentRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // half-open
  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
};

// Token sequence of one task rendering. Segment names: "bos", "instruction",
// "<slot>_header" and "<slot>" for each slot, "eos". The target slot's
// content plus "eos" carry loss.
struct RenderedInstance {
  Task task = Task::qa_plain;
  std::vector<int> token_ids;
  std::vector<std::uint8_t> loss_mask;
  std::map<std::string, SegmentRange> segments;
  bool truncated = false;
  std::size_t document_sentences = 0;  // sentences that survived truncation

  const SegmentRange& segment(const std::string& name) const;
  const SegmentRange& target() const;
  std::size_t loss_positions() const;
};

// Text placed into each slot. Rendering a prompt for generation leaves the
// target slot unfilled.
struct SlotContents {
  std::vector<std::string> document;
  std::string question;
  std::string evidence;
  std::string answer;
};

// Training target for multi-reference answers: references joined with ", ".
std::string answer_target(const TripletExample& ex);
SlotContents slot_contents(const TripletExample& ex);

// Full teacher-forced rendering with target and EOS. Document sentences are
// dropped from the end until the sequence fits `max_len`; throws DataError
// when the target is empty, a conditioning field is missing, or nothing fits.
RenderedInstance render(Task task, const TripletExample& ex, const Tokenizer& tok, std::size_t max_len,
                        const TemplateSet& templates = TemplateSet::defaults());
RenderedInstance render_contents(Task task, const SlotContents& contents, const Tokenizer& tok,
                                 std::size_t max_len, const TemplateSet& templates);

// Prompt ending right after the target slot header, for generation. Reserves
// `reserve` positions for the continuation when truncating.
RenderedInstance render_prompt(Task task, const SlotContents& contents, const Tokenizer& tok,
                               std::size_t max_len, std::size_t reserve, const TemplateSet& templates);

struct BridgingPair {
  RenderedInstance with_evidence;  // QEA
  RenderedInstance plain;          // QA_PLAIN
  // (plain row, evidence row): logits rows predicting the same target token.
  std::vector<std::pair<std::size_t, std::size_t>> aligned_rows;
};

// Both renderings keep the same document sentences so they differ only in the
// evidence block and instruction; throws DataError when targets cannot be aligned.
BridgingPair build_pair_for_bridging(const TripletExample& ex, const Tokenizer& tok, std::size_t max_len,
                                     const TemplateSet& templates = TemplateSet::defaults());

// Logits rows whose next token carries loss.
std::vector<std::size_t> loss_rows(const RenderedInstance& inst);

// Debug dump as one JSON object (task, tokens, decoded segments, mask).
std::string debug_dump(const RenderedInstance& inst, const Tokenizer& tok);

}  // namespace tqa
