#include <algorithm>

#include "doctest.h"
#include "json.hpp"
#include "tripletqa/errors.hpp"
#include "tripletqa/prompting.hpp"
#include "tripletqa/synthetic.hpp"
#include "tripletqa/trainer.hpp"

using namespace tqa;

namespace {

TripletExample sample() {
  Document d{"doc", {"Alice lives in Paris.", "Bruno works as a baker.", "Chen lives in Lima."}};
  return make_example("s1", d, "Where does Chen live?", {3}, {"Lima"}, AnswerType::extractive);
}

WordTokenizer tokenizer_for(const std::vector<TripletExample>& corpus) {
  return build_tokenizer(corpus, TemplateSet::defaults());
}

std::vector<int> slice(const RenderedInstance& inst, const SegmentRange& r) {
  return {inst.token_ids.begin() + static_cast<std::ptrdiff_t>(r.begin),
          inst.token_ids.begin() + static_cast<std::ptrdiff_t>(r.end)};
}

}  // namespace

TEST_CASE("each task places the target slot last and masks only target plus eos") {
  auto ex = sample();
  auto tok = tokenizer_for({ex});
  for (Task t : {Task::qae, Task::qea, Task::eaq, Task::qa_plain}) {
    CAPTURE(to_string(t));
    auto inst = render(t, ex, tok, 512);
    const auto& target = inst.target();
    CHECK(inst.token_ids.front() == tok.bos());
    CHECK(inst.token_ids.back() == tok.eos());
    CHECK(target.end + 1 == inst.token_ids.size());
    CHECK(inst.loss_mask.size() == inst.token_ids.size());
    CHECK(inst.loss_mask[0] == 0);
    for (std::size_t i = 0; i < inst.loss_mask.size(); ++i) {
      CHECK(inst.loss_mask[i] == ((i >= target.begin && i < target.end) || i + 1 == inst.token_ids.size()));
    }
    CHECK(inst.loss_positions() == target.size() + 1);
    auto rows = loss_rows(inst);
    CHECK(rows.front() == target.begin - 1);
    CHECK(!inst.truncated);
  }
}

TEST_CASE("segment contents decode to the slot text") {
  auto ex = sample();
  auto tok = tokenizer_for({ex});
  auto inst = render(Task::qea, ex, tok, 512);
  CHECK(tok.decode(slice(inst, inst.segment("evidence"))) == "chen lives in lima .");
  CHECK(tok.decode(slice(inst, inst.segment("answer"))) == "lima");
  CHECK(tok.decode(slice(inst, inst.segment("question"))) == "where does chen live ?");
  CHECK(tok.decode(slice(inst, inst.segment("instruction"))) ==
        canonical_text(TemplateSet::defaults().get(Task::qea).instruction));
  auto doc = inst.segment("document");
  auto ev = inst.segment("evidence");
  auto q = inst.segment("question");
  CHECK(doc.end <= q.begin);
  CHECK(q.end <= ev.begin);
  CHECK(inst.document_sentences == 3);
}

TEST_CASE("qae conditions on the answer and targets the evidence") {
  auto ex = sample();
  auto tok = tokenizer_for({ex});
  auto inst = render(Task::qae, ex, tok, 512);
  CHECK(inst.segment("answer").end <= inst.segment("evidence").begin);
  CHECK(inst.target().begin == inst.segment("evidence").begin);
}

TEST_CASE("eaq document slot is optional") {
  auto ex = sample();
  auto tok = tokenizer_for({ex});
  auto plain = render(Task::eaq, ex, tok, 512);
  CHECK(plain.segments.count("document") == 0);
  CHECK(plain.document_sentences == 0);
  CHECK(!plain.truncated);
  auto templates = TemplateSet::defaults();
  templates.set_eaq_include_document(true);
  auto with_doc = render(Task::eaq, ex, tok, 512, templates);
  CHECK(with_doc.segments.count("document") == 1);
  CHECK(with_doc.token_ids.size() > plain.token_ids.size());
}

TEST_CASE("truncation drops trailing document sentences") {
  auto ex = sample();
  auto tok = tokenizer_for({ex});
  auto full = render(Task::qa_plain, ex, tok, 512);
  auto last_sentence = tok.encode(ex.document.sentences.back()).size();
  auto cut = render(Task::qa_plain, ex, tok, full.token_ids.size() - 1);
  CHECK(cut.truncated);
  CHECK(cut.document_sentences == 2);
  CHECK(cut.token_ids.size() == full.token_ids.size() - last_sentence);
  CHECK(cut.token_ids.size() <= full.token_ids.size() - 1);
  CHECK(tok.decode(slice(cut, cut.target())) == "lima");
  CHECK_THROWS_AS(render(Task::qa_plain, ex, tok, 10), DataError);
}

TEST_CASE("missing fields are data errors") {
  Document d{"doc", {"One sentence."}};
  auto no_evidence = make_example("n", d, "what?", {}, {"x"}, AnswerType::abstractive);
  auto tok = tokenizer_for({no_evidence});
  CHECK_THROWS_AS(render(Task::qae, no_evidence, tok, 512), DataError);
  CHECK_THROWS_AS(render(Task::eaq, no_evidence, tok, 512), DataError);
  CHECK_NOTHROW(render(Task::qea, no_evidence, tok, 512));
  CHECK_NOTHROW(render(Task::qa_plain, no_evidence, tok, 512));
}

TEST_CASE("prompts stop after the target header") {
  auto ex = sample();
  auto tok = tokenizer_for({ex});
  auto c = slot_contents(ex);
  c.answer.clear();
  auto p = render_prompt(Task::qa_plain, c, tok, 512, 8, TemplateSet::defaults());
  auto full = render(Task::qa_plain, ex, tok, 512);
  CHECK(p.segments.count("answer") == 0);
  CHECK(p.token_ids.size() == full.target().begin);
  CHECK(std::equal(p.token_ids.begin(), p.token_ids.end(), full.token_ids.begin()));
  CHECK(p.loss_positions() == 0);

  auto qae = slot_contents(ex);
  qae.answer.clear();
  qae.evidence.clear();
  CHECK_NOTHROW(render_prompt(Task::qae, qae, tok, 512, 8, TemplateSet::defaults()));
}

TEST_CASE("bridging pairs align identical answer tokens") {
  auto corpus = synthetic_corpus({10, 4, 3, false});
  auto tok = tokenizer_for(corpus);
  for (const auto& ex : corpus) {
    auto pair = build_pair_for_bridging(ex, tok, 512);
    CHECK(pair.with_evidence.task == Task::qea);
    CHECK(pair.plain.task == Task::qa_plain);
    CHECK(pair.aligned_rows.size() == pair.plain.loss_positions());
    for (auto [p, e] : pair.aligned_rows) {
      CHECK(pair.plain.token_ids[p + 1] == pair.with_evidence.token_ids[e + 1]);
    }
    CHECK(pair.plain.document_sentences == pair.with_evidence.document_sentences);
  }
  // A length limit that forces truncation keeps both sides on the same prefix.
  auto pair = build_pair_for_bridging(corpus[0], tok, 70);
  CHECK(pair.plain.document_sentences == pair.with_evidence.document_sentences);
  CHECK(pair.with_evidence.token_ids.size() <= 70);
}

TEST_CASE("debug dump is valid json naming the task") {
  auto ex = sample();
  auto tok = tokenizer_for({ex});
  auto j = nlohmann::json::parse(debug_dump(render(Task::eaq, ex, tok, 512), tok));
  CHECK(j.at("task") == "eaq");
  CHECK(j.at("token_ids").size() == j.at("loss_mask").size());
}

TEST_CASE("synthetic examples carry distinct ids and single-sentence evidence") {
  auto corpus = synthetic_corpus({5, 4, 11, false});
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(corpus[i].id == "syn-" + std::to_string(i) + "-q0");
    CHECK(corpus[i].document.id == "syn-" + std::to_string(i));
    REQUIRE(corpus[i].evidence_indices.size() == 1);
    CHECK(corpus[i].evidence_text().find(corpus[i].answers[0]) != std::string::npos);
  }
}
