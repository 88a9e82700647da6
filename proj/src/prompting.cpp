#include "tripletqa/prompting.hpp"

#include <algorithm>

#include "json.hpp"
#include "tripletqa/errors.hpp"

namespace tqa {

namespace {

const char* slot_label(Slot s) {
  switch (s) {
    case Slot::document: return "\n[Document]";
    case Slot::question: return "\n[Question]";
    case Slot::evidence: return "\n[Evidence]";
    case Slot::answer: return "\n[Answer]";
  }
  return "";
}

struct Encoded {
  std::vector<std::vector<int>> document;  // per sentence
  std::vector<int> question, evidence, answer;
};

Encoded encode_contents(const SlotContents& c, const Tokenizer& tok) {
  Encoded e;
  for (const auto& s : c.document) e.document.push_back(tok.encode(s));
  e.question = tok.encode(c.question);
  e.evidence = tok.encode(c.evidence);
  e.answer = tok.encode(c.answer);
  return e;
}

const std::vector<int>& slot_tokens(const Encoded& e, Slot s) {
  switch (s) {
    case Slot::question: return e.question;
    case Slot::evidence: return e.evidence;
    case Slot::answer: return e.answer;
    case Slot::document: break;
  }
  throw Error(ErrorCategory::internal, "document slot has no flat token list");
}

void check_fields(Task task, const PromptTemplate& tpl, const Encoded& e, bool with_target) {
  for (std::size_t i = 0; i < tpl.slot_order.size(); ++i) {
    Slot s = tpl.slot_order[i];
    bool is_target = i + 1 == tpl.slot_order.size();
    if (s == Slot::document) continue;
    if (is_target && !with_target) continue;
    const auto& toks = slot_tokens(e, s);
    // QEA accepts an empty evidence block so it can pair with QA_PLAIN, and a
    // QAE generation prompt may leave the answer empty for evidence-first inference.
    bool optional = (task == Task::qea && s == Slot::evidence) ||
                    (task == Task::qae && s == Slot::answer && !with_target);
    if (toks.empty() && !optional) {
      throw DataError(std::string(to_string(task)) + (is_target ? ": empty target " : ": missing ") +
                      std::string(to_string(s)));
    }
  }
}

RenderedInstance assemble(Task task, const PromptTemplate& tpl, const Encoded& e, std::size_t doc_sentences,
                          bool with_target, const Tokenizer& tok) {
  RenderedInstance inst;
  inst.task = task;
  inst.document_sentences = doc_sentences;
  auto& ids = inst.token_ids;
  auto mark = [&](const std::string& name, std::size_t begin) {
    inst.segments[name] = SegmentRange{begin, ids.size()};
  };

  ids.push_back(tok.bos());
  mark("bos", 0);
  std::size_t begin = ids.size();
  auto instr = tok.encode(tpl.instruction);
  ids.insert(ids.end(), instr.begin(), instr.end());
  mark("instruction", begin);

  for (std::size_t i = 0; i < tpl.slot_order.size(); ++i) {
    Slot s = tpl.slot_order[i];
    bool is_target = i + 1 == tpl.slot_order.size();
    std::string name(to_string(s));
    begin = ids.size();
    auto header = tok.encode(slot_label(s));
    ids.insert(ids.end(), header.begin(), header.end());
    mark(name + "_header", begin);
    if (is_target && !with_target) break;
    begin = ids.size();
    if (s == Slot::document) {
      for (std::size_t k = 0; k < doc_sentences; ++k) ids.insert(ids.end(), e.document[k].begin(), e.document[k].end());
    } else {
      const auto& toks = slot_tokens(e, s);
      ids.insert(ids.end(), toks.begin(), toks.end());
    }
    mark(name, begin);
  }
  if (with_target) {
    begin = ids.size();
    ids.push_back(tok.eos());
    mark("eos", begin);
  }

  inst.loss_mask.assign(ids.size(), 0);
  if (with_target) {
    const auto& t = inst.target();
    for (std::size_t i = t.begin; i < t.end; ++i) inst.loss_mask[i] = 1;
    inst.loss_mask[ids.size() - 1] = 1;
  }
  return inst;
}

bool has_document(const PromptTemplate& tpl) {
  return std::find(tpl.slot_order.begin(), tpl.slot_order.end(), Slot::document) != tpl.slot_order.end();
}

// Largest document prefix for which the rendering plus `reserve` fits.
RenderedInstance fit(Task task, const PromptTemplate& tpl, const Encoded& e, bool with_target,
                     std::size_t max_len, std::size_t reserve, const Tokenizer& tok,
                     std::optional<std::size_t> sentence_cap = std::nullopt) {
  std::size_t k = has_document(tpl) ? e.document.size() : 0;
  if (sentence_cap) k = std::min(k, *sentence_cap);
  auto inst = assemble(task, tpl, e, k, with_target, tok);
  std::size_t doc_tokens = 0;
  for (std::size_t i = 0; i < k; ++i) doc_tokens += e.document[i].size();
  std::size_t fixed = inst.token_ids.size() - doc_tokens;
  if (fixed + reserve > max_len) {
    throw DataError(std::string(to_string(task)) + ": rendering needs " + std::to_string(fixed + reserve) +
                    " positions without any document sentence, max_len is " + std::to_string(max_len));
  }
  while (fixed + doc_tokens + reserve > max_len) {
    --k;
    doc_tokens -= e.document[k].size();
  }
  if (k != inst.document_sentences) inst = assemble(task, tpl, e, k, with_target, tok);
  inst.truncated = has_document(tpl) && k < e.document.size();
  return inst;
}

}  // namespace

std::string_view to_string(Task t) {
  switch (t) {
    case Task::qae: return "qae";
    case Task::qea: return "qea";
    case Task::eaq: return "eaq";
    case Task::qa_plain: return "qa_plain";
  }
  return "qa_plain";
}

Task task_from_string(std::string_view s) {
  if (s == "qae") return Task::qae;
  if (s == "qea") return Task::qea;
  if (s == "eaq") return Task::eaq;
  if (s == "qa_plain") return Task::qa_plain;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

std::string_view to_string(Slot s) {
  switch (s) {
    case Slot::document: return "document";
    case Slot::question: return "question";
    case Slot::evidence: return "evidence";
    case Slot::answer: return "answer";
  }
  return "document";
}

TemplateSet TemplateSet::defaults() {
  TemplateSet t;
  t.templates_[static_cast<std::size_t>(Task::qae)] = {
      Task::qae, "generate the relevant evidence from the document to answer the following question",
      {Slot::document, Slot::question, Slot::answer, Slot::evidence}};
  t.templates_[static_cast<std::size_t>(Task::qea)] = {
      Task::qea,
      "generate the correct answers for the following question based on the document and the evidence "
      "support the answers to the question.",
      {Slot::document, Slot::question, Slot::evidence, Slot::answer}};
  t.templates_[static_cast<std::size_t>(Task::eaq)] = {
      Task::eaq, "reconstruct the question based on the answers and corresponding supporting evidence",
      {Slot::evidence, Slot::answer, Slot::question}};
  t.templates_[static_cast<std::size_t>(Task::qa_plain)] = {
      Task::qa_plain, "generate the correct answers for the following question based on the document.",
      {Slot::document, Slot::question, Slot::answer}};
  return t;
}

void TemplateSet::set_instruction(Task t, std::string text) {
  templates_[static_cast<std::size_t>(t)].instruction = std::move(text);
}

void TemplateSet::set_eaq_include_document(bool on) {
  eaq_include_document_ = on;
  auto& order = templates_[static_cast<std::size_t>(Task::eaq)].slot_order;
  order = on ? std::vector<Slot>{Slot::document, Slot::evidence, Slot::answer, Slot::question}
             : std::vector<Slot>{Slot::evidence, Slot::answer, Slot::question};
}

const SegmentRange& RenderedInstance::segment(const std::string& name) const {
  auto it = segments.find(name);
  if (it == segments.end()) throw DataError("rendered instance has no segment '" + name + "'");
  return it->second;
}

const SegmentRange& RenderedInstance::target() const {
  return segment(std::string(to_string(TemplateSet::defaults().get(task).target())));
}

std::size_t RenderedInstance::loss_positions() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), 1));
}

std::string answer_target(const TripletExample& ex) {
  std::string out;
  for (std::size_t i = 0; i < ex.answers.size(); ++i) {
    if (i) out += ", ";
    out += ex.answers[i];
  }
  return out;
}

SlotContents slot_contents(const TripletExample& ex) {
  return SlotContents{ex.document.sentences, ex.question, ex.evidence_text(), answer_target(ex)};
}

RenderedInstance render_contents(Task task, const SlotContents& contents, const Tokenizer& tok,
                                 std::size_t max_len, const TemplateSet& templates) {
  const auto& tpl = templates.get(task);
  auto e = encode_contents(contents, tok);
  check_fields(task, tpl, e, true);
  return fit(task, tpl, e, true, max_len, 0, tok);
}

RenderedInstance render(Task task, const TripletExample& ex, const Tokenizer& tok, std::size_t max_len,
                        const TemplateSet& templates) {
  try {
    return render_contents(task, slot_contents(ex), tok, max_len, templates);
  } catch (const DataError& err) {
    throw DataError("record " + ex.id + ": " + err.what());
  }
}

RenderedInstance render_prompt(Task task, const SlotContents& contents, const Tokenizer& tok,
                               std::size_t max_len, std::size_t reserve, const TemplateSet& templates) {
  const auto& tpl = templates.get(task);
  auto e = encode_contents(contents, tok);
  check_fields(task, tpl, e, false);
  return fit(task, tpl, e, false, max_len, reserve, tok);
}

std::vector<std::size_t> loss_rows(const RenderedInstance& inst) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 1; i < inst.loss_mask.size(); ++i) {
    if (inst.loss_mask[i]) rows.push_back(i - 1);
  }
  return rows;
}

BridgingPair build_pair_for_bridging(const TripletExample& ex, const Tokenizer& tok, std::size_t max_len,
                                     const TemplateSet& templates) {
  auto fail = [&](const std::string& why) -> DataError { return DataError("record " + ex.id + ": " + why); };
  auto contents = slot_contents(ex);
  auto e = encode_contents(contents, tok);
  const auto& tpl_qea = templates.get(Task::qea);
  const auto& tpl_plain = templates.get(Task::qa_plain);
  BridgingPair pair;
  try {
    check_fields(Task::qea, tpl_qea, e, true);
    check_fields(Task::qa_plain, tpl_plain, e, true);
    pair.with_evidence = fit(Task::qea, tpl_qea, e, true, max_len, 0, tok);
    pair.plain = fit(Task::qa_plain, tpl_plain, e, true, max_len, 0, tok);
    // Same document prefix on both sides.
    std::size_t k = std::min(pair.with_evidence.document_sentences, pair.plain.document_sentences);
    if (pair.with_evidence.document_sentences != k) pair.with_evidence = fit(Task::qea, tpl_qea, e, true, max_len, 0, tok, k);
    if (pair.plain.document_sentences != k) pair.plain = fit(Task::qa_plain, tpl_plain, e, true, max_len, 0, tok, k);
  } catch (const DataError& err) {
    throw fail(std::string("bridging pair: ") + err.what());
  }
  auto rows_plain = loss_rows(pair.plain);
  auto rows_ev = loss_rows(pair.with_evidence);
  if (rows_plain.size() != rows_ev.size()) throw fail("bridging targets have different lengths");
  for (std::size_t i = 0; i < rows_plain.size(); ++i) {
    if (pair.plain.token_ids[rows_plain[i] + 1] != pair.with_evidence.token_ids[rows_ev[i] + 1]) {
      throw fail("bridging targets differ at position " + std::to_string(i));
    }
    pair.aligned_rows.emplace_back(rows_plain[i], rows_ev[i]);
  }
  return pair;
}

std::string debug_dump(const RenderedInstance& inst, const Tokenizer& tok) {
  nlohmann::json j;
  j["task"] = std::string(to_string(inst.task));
  j["token_ids"] = inst.token_ids;
  j["loss_mask"] = inst.loss_mask;
  j["truncated"] = inst.truncated;
  j["document_sentences"] = inst.document_sentences;
  nlohmann::json segs = nlohmann::json::object();
  for (const auto& [name, r] : inst.segments) {
    std::vector<int> part(inst.token_ids.begin() + static_cast<std::ptrdiff_t>(r.begin),
                          inst.token_ids.begin() + static_cast<std::ptrdiff_t>(r.end));
    segs[name] = {{"begin", r.begin}, {"end", r.end}, {"text", tok.decode(part)}};
  }
  j["segments"] = segs;
  return j.dump();
}

}  // namespace tqa
