#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "tripletqa/analysis.hpp"
#include "tripletqa/errors.hpp"
#include "tripletqa/synthetic.hpp"
#include "tripletqa/trainer.hpp"

using namespace tqa;
using nlohmann::json;

namespace {

ExampleRecord rec(std::string id, std::size_t len, double f1) {
  ExampleRecord r;
  r.id = std::move(id);
  r.doc_length = len;
  r.sentence_count = len / 10 + 1;
  r.f1 = f1;
  return r;
}

ExampleRecord scored(std::size_t i, double qea, double qae, double eaq) {
  ExampleRecord r;
  r.id = "r" + std::to_string(1000 + i);
  r.qea_f1 = qea;
  r.evidence_f1 = qae;
  r.eaq_f1 = eaq;
  return r;
}

// Emits the token just before the first "?" of the prompt, then EOS.
struct CopyLm : CausalLm {
  int question_mark = 0;
  std::size_t vocab = 0;
  ForwardOutput forward(std::span<const int> tokens, bool) const override {
    ForwardOutput out;
    out.logits = Matrix(tokens.size(), vocab);
    int next = WordTokenizer::kEos;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      if (tokens[i] == question_mark) {
        if (tokens.back() != tokens[i - 1]) next = tokens[i - 1];
        break;
      }
    }
    out.logits(tokens.size() - 1, static_cast<std::size_t>(next)) = 1.0;
    return out;
  }
  std::size_t vocab_size() const override { return vocab; }
  std::size_t max_positions() const override { return 512; }
};

// Answers only when the prompt contains the document sentences.
struct DocumentLm : CausalLm {
  const WordTokenizer* tok = nullptr;
  std::vector<TripletExample> corpus;
  ForwardOutput forward(std::span<const int> tokens, bool) const override {
    ForwardOutput out;
    out.logits = Matrix(tokens.size(), tok->vocab_size());
    int next = WordTokenizer::kEos;
    for (const auto& ex : corpus) {
      auto c = slot_contents(ex);
      c.answer.clear();
      c.evidence.clear();
      auto prompt = render_prompt(Task::qa_plain, c, *tok, 512, 8, TemplateSet::defaults()).token_ids;
      if (tokens.size() < prompt.size() || !std::equal(prompt.begin(), prompt.end(), tokens.begin())) continue;
      auto answer = tok->encode(ex.answers[0]);
      std::size_t k = tokens.size() - prompt.size();
      if (k < answer.size()) next = answer[k];
      break;
    }
    out.logits(tokens.size() - 1, static_cast<std::size_t>(next)) = 1.0;
    return out;
  }
  std::size_t vocab_size() const override { return tok->vocab_size(); }
  std::size_t max_positions() const override { return 512; }
};

}  // namespace

TEST_CASE("grouped f1 follows the length quartiles") {
  std::vector<double> f1 = {1, 1, 0, 0, 1, 1, 0, 0};
  std::vector<std::size_t> len = {10, 20, 50, 60, 30, 40, 70, 80};
  std::vector<ExampleRecord> records;
  for (std::size_t i = 0; i < 8; ++i) records.push_back(rec("e" + std::to_string(i), len[i], f1[i]));
  auto g = grouped_f1(records, GroupKey::doc_length);
  REQUIRE(g.groups.size() == 4);
  CHECK(g.groups[0].f1 == 100.0);
  CHECK(g.groups[1].f1 == 100.0);
  CHECK(g.groups[2].f1 == 0.0);
  CHECK(g.groups[3].f1 == 0.0);
  CHECK(g.groups[0].mean_key == 15.0);
  CHECK(g.groups[3].mean_key == 75.0);
  CHECK(json::parse(g.to_json())["groups"].size() == 4);
  CHECK(g.to_tsv().rfind("mean_doc_length\tf1\n", 0) == 0);
}

TEST_CASE("equal keys split by id") {
  std::vector<ExampleRecord> records;
  for (char c : std::string("hgfedcba")) records.push_back(rec(std::string(1, c), 5, 0.5));
  auto g = grouped_f1(records, GroupKey::sentence_count);
  for (const auto& grp : g.groups) CHECK(grp.count == 2);
  CHECK(g.groups[0].ids == std::vector<std::string>{"a", "b"});
  CHECK(g.groups[3].ids == std::vector<std::string>{"g", "h"});
  records.resize(3);
  CHECK_THROWS_AS(grouped_f1(records, GroupKey::doc_length), DataError);
}

TEST_CASE("multirc fixture lengths ascend across groups") {
  auto lr = load_multirc(std::string(TQA_TEST_DATA) + "/multirc_fixture.json");
  std::vector<ExampleRecord> records;
  for (const auto& ex : lr.examples) {
    auto r = rec(ex.id, document_token_length(ex.document), 0.5);
    r.sentence_count = ex.document.sentences.size();
    records.push_back(r);
  }
  for (auto key : {GroupKey::doc_length, GroupKey::sentence_count}) {
    auto g = grouped_f1(records, key);
    for (std::size_t i = 1; i < 4; ++i) CHECK(g.groups[i - 1].mean_key < g.groups[i].mean_key);
  }
}

TEST_CASE("correlation fits") {
  std::vector<ExampleRecord> same, anti, flat;
  for (std::size_t i = 0; i < 120; ++i) {
    double x = std::fmod(static_cast<double>(i) * 0.37, 1.0);
    same.push_back(scored(i, x, x, x));
    anti.push_back(scored(i, x, 1.0 - x, 0.5));
    flat.push_back(scored(i, x, 0.4, x * x));
  }
  auto s = correlation(same);
  CHECK(s.bins.size() == 50);
  CHECK(!s.reduced);
  CHECK(s.qea_qae.slope == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(s.qea_qae.intercept) < 1e-9);
  std::size_t lo = 1000, hi = 0;
  for (const auto& b : s.bins) {
    lo = std::min(lo, b.count);
    hi = std::max(hi, b.count);
  }
  CHECK(hi - lo <= 1);
  for (std::size_t i = 1; i < s.bins.size(); ++i) CHECK(s.bins[i - 1].qea <= s.bins[i].qea);

  CHECK(correlation(anti).qea_qae.slope < 0.0);
  auto f = correlation(flat);
  CHECK(std::abs(f.qea_qae.slope) < 1e-12);
  CHECK(f.qea_eaq.slope > 0.0);

  std::vector<ExampleRecord> few(same.begin(), same.begin() + 7);
  auto r = correlation(few);
  CHECK(r.reduced);
  CHECK(r.bins.size() == 7);
  CHECK(json::parse(r.to_json())["reduced"] == true);

  auto missing = same;
  missing[3].eaq_f1.reset();
  CHECK_THROWS_AS(correlation(missing), DataError);
}

TEST_CASE("degenerate fit has zero slope") {
  auto f = fit_line({1.0, 1.0, 1.0}, {2.0, 3.0, 4.0});
  CHECK(f.degenerate);
  CHECK(f.slope == 0.0);
  CHECK(f.intercept == 3.0);
}

TEST_CASE("hallucination probabilities and undefined conditionals") {
  auto r = hallucination_from_flags({true, true, false, false, false}, {true, false, true, true, false});
  CHECK(r.p_question == doctest::Approx(0.4));
  CHECK(*r.p_document_given_correct == doctest::Approx(0.5));
  CHECK(*r.p_document_given_wrong == doctest::Approx(2.0 / 3.0));

  auto none = hallucination_from_flags({false, false}, {true, false});
  CHECK(!none.p_document_given_correct);
  auto j = json::parse(none.to_json());
  CHECK(j["p_document_given_question_correct"] == "undefined");
  CHECK(j["p_document_given_question_wrong"] == 0.5);
  CHECK(none.to_tsv().find("undefined") != std::string::npos);
}

TEST_CASE("hallucination probe on constructed corpora") {
  auto templates = TemplateSet::defaults();
  {
    auto corpus = synthetic_corpus({10, 4, 2, false});
    auto tok = build_tokenizer(corpus, templates);
    DocumentLm lm;
    lm.tok = &tok;
    lm.corpus = corpus;
    auto r = hallucination_probe(lm, tok, corpus, templates, 512);
    CHECK(r.p_question == 0.0);
    CHECK(*r.p_document_given_wrong == 1.0);
    CHECK(!r.p_document_given_correct);
  }
  {
    auto corpus = synthetic_corpus({10, 4, 2, true});
    auto tok = build_tokenizer(corpus, templates);
    CopyLm lm;
    lm.vocab = tok.vocab_size();
    lm.question_mark = tok.encode("?")[0];
    auto r = hallucination_probe(lm, tok, corpus, templates, 512);
    CHECK(r.p_question == 1.0);
    CHECK(*r.p_document_given_correct == 1.0);
    CHECK(!r.p_document_given_wrong);
  }
}

TEST_CASE("uniform attention splits mass by segment length") {
  auto corpus = synthetic_corpus({4, 4, 3, false});
  TrainConfig c;
  c.backbone.layers = 1;
  c.backbone.dim = 8;
  c.backbone.max_positions = 128;
  c.max_len = 128;
  auto tok = build_tokenizer(corpus, c.templates);
  c.backbone.vocab = tok.vocab_size();
  Transformer model(c.backbone, 1);
  for (const char* name : {"layers.0.attn.wq", "layers.0.attn.wk", "layers.0.attn.bq", "layers.0.attn.bk"}) {
    const auto& t = model.layout().find(name);
    std::fill_n(model.parameters().begin() + static_cast<std::ptrdiff_t>(t.offset), t.size(), 0.0);
  }
  auto r = attention_stats(model, tok, {corpus[0]}, c.templates, 128);
  REQUIRE(r.layers.size() == 1);
  auto inst = render(Task::qea, corpus[0], tok, 128);
  const double doc = static_cast<double>(inst.segment("document").size());
  const double ev = static_cast<double>(inst.segment("evidence").size());
  CHECK(r.layers[0].qea_document / r.layers[0].qea_evidence == doctest::Approx(doc / ev).epsilon(1e-12));
  CHECK(r.eaq_instances == 1);
  auto e = render(Task::eaq, corpus[0], tok, 128);
  const double e_ev = static_cast<double>(e.segment("evidence").size());
  const double e_ans = static_cast<double>(e.segment("answer").size());
  CHECK(r.layers[0].eaq_evidence / r.layers[0].eaq_answer == doctest::Approx(e_ev / e_ans).epsilon(1e-12));
}

TEST_CASE("attention report shape and empty evidence") {
  TrainConfig c;
  c.backbone.layers = 3;
  c.backbone.dim = 8;
  c.backbone.max_positions = 64;
  c.backbone.adapter_tokens = 2;
  Document d{"d", {"alice lives in paris ."}};
  std::vector<TripletExample> corpus = {make_example("x", d, "where ?", {}, {"paris"}, AnswerType::extractive)};
  auto tok = build_tokenizer(corpus, c.templates);
  c.backbone.vocab = tok.vocab_size();
  Transformer model(c.backbone, 4);
  auto r = attention_stats(model, tok, corpus, c.templates, 64);
  CHECK(r.layers.size() == 3);
  for (const auto& l : r.layers) {
    CHECK(l.qea_evidence == 0.0);
    CHECK(l.qea_document > 0.0);
    CHECK(l.qea_document <= 1.0);
  }
  CHECK(r.eaq_instances == 0);
  CHECK(r.to_tsv().find("layer\t") == 0);
}

namespace {

struct BlindLm : CausalLm {
  ForwardOutput forward(std::span<const int> tokens, bool) const override {
    ForwardOutput out;
    out.logits = Matrix(tokens.size(), 64);
    return out;
  }
  std::size_t vocab_size() const override { return 64; }
  std::size_t max_positions() const override { return 512; }
};

}  // namespace

TEST_CASE("attention stats need captured attention") {
  auto corpus = synthetic_corpus({1, 4, 3, false});
  auto tok = build_tokenizer(corpus, TemplateSet::defaults());
  BlindLm lm;
  CHECK_THROWS_AS(attention_stats(lm, tok, corpus, TemplateSet::defaults(), 512), DataError);
}
