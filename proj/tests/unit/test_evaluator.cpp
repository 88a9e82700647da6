#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "tripletqa/errors.hpp"
#include "tripletqa/evaluator.hpp"
#include "tripletqa/hash.hpp"
#include "tripletqa/synthetic.hpp"
#include "tripletqa/trainer.hpp"

using namespace tqa;
using nlohmann::json;

namespace {

// Replays a stored continuation for every prompt it has seen; anything else
// gets EOS immediately.
struct LookupLm : CausalLm {
  std::map<std::vector<int>, std::vector<int>> continuations;
  std::size_t vocab = 0;
  std::size_t limit = 1024;
  int eos = WordTokenizer::kEos;

  ForwardOutput forward(std::span<const int> tokens, bool) const override {
    ForwardOutput out;
    out.logits = Matrix(tokens.size(), vocab);
    int next = eos;
    for (const auto& [prompt, cont] : continuations) {
      if (prompt.size() > tokens.size() || !std::equal(prompt.begin(), prompt.end(), tokens.begin())) continue;
      std::size_t k = tokens.size() - prompt.size();
      if (!std::equal(cont.begin(), cont.begin() + static_cast<std::ptrdiff_t>(std::min(k, cont.size())),
                      tokens.begin() + static_cast<std::ptrdiff_t>(prompt.size())))
        continue;
      next = k < cont.size() ? cont[k] : eos;
      break;
    }
    out.logits(tokens.size() - 1, static_cast<std::size_t>(next)) = 1.0;
    return out;
  }
  std::size_t vocab_size() const override { return vocab; }
  std::size_t max_positions() const override { return limit; }
};

LookupLm memorizer(const std::vector<TripletExample>& corpus, const WordTokenizer& tok, const TemplateSet& t) {
  LookupLm lm;
  lm.vocab = tok.vocab_size();
  for (const auto& ex : corpus) {
    auto c = slot_contents(ex);
    c.answer.clear();
    c.evidence.clear();
    lm.continuations[render_prompt(Task::qa_plain, c, tok, 512, 32, t).token_ids] = tok.encode(answer_target(ex));
  }
  return lm;
}

}  // namespace

TEST_CASE("normalization rules") {
  CHECK(normalize_answer("The 4 years.") == "4 years");
  CHECK(normalize_answer("") == "");
  CHECK(normalize_answer("An  apple, A DAY!") == "apple day");
  CHECK(normalize_answer("theory") == "theory");
}

TEST_CASE("normalization is idempotent on a fuzz set") {
  std::mt19937_64 rng(17);
  const std::string alphabet = "aAnNtThHeE .,!?'-\t\n0123456789xyz";
  for (int i = 0; i < 50; ++i) {
    std::string s;
    const auto len = rng() % 40;
    for (std::size_t k = 0; k < len; ++k) s.push_back(alphabet[rng() % alphabet.size()]);
    if (i % 5 == 0) s = "the a an " + s + " the";
    auto once = normalize_answer(s);
    CHECK(normalize_answer(once) == once);
  }
}

TEST_CASE("metric golden file") {
  std::ifstream in(std::string(TQA_TEST_DATA) + "/metric_golden.jsonl");
  REQUIRE(in);
  std::string line;
  int cases = 0;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    ++cases;
    CAPTURE(j["case"].get<int>());
    const double want = static_cast<double>(j["f1_num"].get<int>()) / j["f1_den"].get<int>();
    const auto pred = j["pred"].get<std::string>();
    if (j["kind"] == "answer") {
      auto refs = j["refs"].get<std::vector<std::string>>();
      CHECK(exact_match(pred, refs) == j["em"].get<int>());
      CHECK(token_f1(pred, refs) == want);
    } else {
      CHECK(evidence_f1(pred, j["gold"].get<std::string>()) == want);
    }
  }
  CHECK(cases == 25);
}

TEST_CASE("metric properties") {
  std::vector<std::string> refs = {"4 years", "four years old", "the 4th year"};
  auto reversed = std::vector<std::string>(refs.rbegin(), refs.rend());
  for (std::string pred : {"4 years", "years", "old 4", "", "4th"}) {
    CHECK(token_f1(pred, refs) == token_f1(pred, reversed));
    CHECK(exact_match(pred, refs) == exact_match(pred, reversed));
    if (exact_match(pred, refs)) CHECK(token_f1(pred, refs) == 1.0);
  }
  CHECK_THROWS_AS(exact_match("x", {}), DataError);
  CHECK_THROWS_AS(token_f1("x", std::vector<std::string>{}), DataError);
  CHECK_THROWS_AS(evidence_f1("x", "   "), DataError);
  CHECK(evidence_f1("", "salt marsh") == 0.0);
}

TEST_CASE("task list parsing") {
  auto t = parse_eval_tasks("qa,evidence,qa");
  CHECK(t == std::vector<EvalTask>{EvalTask::qa, EvalTask::evidence});
  CHECK_THROWS_AS(parse_eval_tasks("qa,summary"), ConfigError);
}

TEST_CASE("a perfect memorizer scores 100") {
  auto corpus = synthetic_corpus({20, 4, 5, false});
  auto templates = TemplateSet::defaults();
  auto tok = build_tokenizer(corpus, templates);
  auto lm = memorizer(corpus, tok, templates);
  EvalOptions o;
  auto r = evaluate(lm, tok, corpus, templates, o);
  REQUIRE(r.em);
  CHECK(*r.em == 100.0);
  CHECK(*r.f1 == 100.0);
  CHECK(r.failures == 0);
  CHECK(r.predictions.size() == 20);
  CHECK(r.predictions[0].normalized == normalize_answer(corpus[0].answers[0]));
}

TEST_CASE("report means equal the per-example records") {
  auto corpus = synthetic_corpus({12, 4, 6, false});
  auto templates = TemplateSet::defaults();
  auto tok = build_tokenizer(corpus, templates);
  auto lm = memorizer({corpus.begin(), corpus.begin() + 5}, tok, templates);
  EvalOptions o;
  o.tasks = {EvalTask::qa, EvalTask::evidence, EvalTask::qea, EvalTask::restore};
  auto r = evaluate(lm, tok, corpus, templates, o);
  double em = 0, f1 = 0, ev = 0;
  for (const auto& rec : r.records) {
    em += *rec.em;
    f1 += *rec.f1;
    ev += *rec.evidence_f1;
    CHECK(rec.sentence_count == 4);
    CHECK(rec.doc_length > 0);
    CHECK(rec.qea_f1);
    CHECK(rec.eaq_f1);
  }
  CHECK(*r.em == doctest::Approx(100.0 * em / 12).epsilon(1e-12));
  CHECK(*r.f1 == doctest::Approx(100.0 * f1 / 12).epsilon(1e-12));
  CHECK(*r.evidence_f1 == doctest::Approx(100.0 * ev / 12).epsilon(1e-12));
  CHECK(*r.em == doctest::Approx(100.0 * 5 / 12));
  for (double v : {*r.em, *r.f1, *r.evidence_f1, *r.qea_f1, *r.eaq_f1}) {
    CHECK(v >= 0.0);
    CHECK(v <= 100.0);
  }

  auto back = record_from_json(record_to_json(r.records[3]));
  CHECK(record_to_json(back) == record_to_json(r.records[3]));
}

TEST_CASE("generation failures score zero and are logged") {
  auto corpus = synthetic_corpus({3, 4, 8, false});
  auto templates = TemplateSet::defaults();
  auto tok = build_tokenizer(corpus, templates);
  auto lm = memorizer(corpus, tok, templates);
  lm.limit = 8;
  EvalOptions o;
  auto r = evaluate(lm, tok, corpus, templates, o);
  CHECK(r.failures == 3);
  CHECK(*r.em == 0.0);
  for (const auto& rec : r.records) {
    CHECK(!rec.errors.empty());
    CHECK(*rec.f1 == 0.0);
  }
}

TEST_CASE("evidence metric excludes examples without gold evidence") {
  Document d{"d", {"alice lives in paris ."}};
  std::vector<TripletExample> corpus = {
      make_example("a", d, "where does alice live ?", {1}, {"paris"}, AnswerType::extractive),
      make_example("b", d, "who is she ?", {}, {"alice"}, AnswerType::extractive)};
  auto templates = TemplateSet::defaults();
  auto tok = build_tokenizer(corpus, templates);
  auto lm = memorizer(corpus, tok, templates);
  EvalOptions o;
  o.tasks = {EvalTask::evidence};
  auto r = evaluate(lm, tok, corpus, templates, o);
  CHECK(r.evidence_excluded == 1);
  CHECK(r.records[0].evidence_f1);
  CHECK(!r.records[1].evidence_f1);
  CHECK(!r.em);
}

TEST_CASE("evaluation of an untrained model is read-only and scores near zero") {
  auto corpus = synthetic_corpus({20, 4, 0, false});
  TrainConfig c;
  c.backbone.layers = 1;
  c.backbone.dim = 16;
  c.backbone.max_positions = 128;
  c.backbone.adapter_tokens = 2;
  c.max_len = 128;
  auto tok = build_tokenizer(corpus, c.templates);
  auto state = init_state(c, tok);
  auto before = hash_doubles(state.model.parameters());
  EvalOptions o;
  o.max_len = 128;
  o.max_answer_tokens = 4;
  auto r = evaluate(state.model, tok, corpus, c.templates, o);
  CHECK(hash_doubles(state.model.parameters()) == before);
  CHECK(*r.em <= 10.0);

  o.with_evidence = true;
  o.max_evidence_tokens = 4;
  auto w = evaluate(state.model, tok, corpus, c.templates, o);
  CHECK(w.with_evidence);
  CHECK(w.records.size() == 20);
}
