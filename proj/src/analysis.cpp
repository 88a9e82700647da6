#include "tripletqa/analysis.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "tripletqa/errors.hpp"

namespace tqa {

using nlohmann::json;

std::string_view to_string(GroupKey k) { return k == GroupKey::doc_length ? "doc_length" : "sentence_count"; }

GroupKey group_key_from_string(std::string_view s) {
  if (s == "doc_length") return GroupKey::doc_length;
  if (s == "sentence_count") return GroupKey::sentence_count;
  throw ConfigError("unknown grouping key '" + std::string(s) + "'");
}

GroupedReport grouped_f1(const std::vector<ExampleRecord>& records, GroupKey key) {
  if (records.size() < 4) throw DataError("grouped_f1 needs at least 4 records, got " + std::to_string(records.size()));
  std::vector<double> keys;
  std::vector<std::string> ids;
  for (const auto& r : records) {
    if (!r.f1) throw DataError("record " + r.id + " has no answer F1");
    keys.push_back(static_cast<double>(key == GroupKey::doc_length ? r.doc_length : r.sentence_count));
    ids.push_back(r.id);
  }
  GroupedReport out;
  out.key = key;
  for (const auto& members : quartile_groups(keys, ids)) {
    Group g;
    g.count = members.size();
    double ks = 0.0, fs = 0.0;
    for (auto i : members) {
      ks += keys[i];
      fs += *records[i].f1;
      g.ids.push_back(ids[i]);
    }
    g.mean_key = ks / static_cast<double>(g.count);
    g.f1 = 100.0 * fs / static_cast<double>(g.count);
    out.groups.push_back(std::move(g));
  }
  return out;
}

std::string GroupedReport::to_json() const {
  json j;
  j["key"] = std::string(to_string(key));
  j["groups"] = json::array();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    j["groups"].push_back({{"index", i}, {"count", g.count}, {"mean_key", g.mean_key}, {"f1", g.f1}, {"ids", g.ids}});
  }
  return j.dump(2);
}

std::string GroupedReport::to_tsv() const {
  std::ostringstream out;
  out.precision(17);
  out << "mean_" << to_string(key) << "\tf1\n";
  for (const auto& g : groups) out << g.mean_key << '\t' << g.f1 << '\n';
  return out.str();
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.empty()) throw DataError("fit_line: need matching non-empty samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LinearFit f;
  if (sxx <= 0.0) {
    f.degenerate = true;
    f.intercept = my;
    return f;
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

CorrelationReport correlation(const std::vector<ExampleRecord>& records, std::size_t bins) {
  if (records.empty()) throw DataError("correlation: no records");
  if (bins == 0) throw ConfigError("correlation: bin count must be positive");
  for (const auto& r : records) {
    if (!r.qea_f1 || !r.evidence_f1 || !r.eaq_f1) {
      throw DataError("record " + r.id + " lacks one of the QEA, QAE, EAQ scores");
    }
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (*records[a].qea_f1 != *records[b].qea_f1) return *records[a].qea_f1 < *records[b].qea_f1;
    return records[a].id < records[b].id;
  });

  CorrelationReport out;
  out.requested_bins = bins;
  if (records.size() < bins) {
    bins = records.size();
    out.reduced = true;
  }
  std::vector<double> qea, qae, eaq;
  for (auto [b, e] : equal_size_bins(records.size(), bins)) {
    CorrelationBin bin;
    bin.count = e - b;
    for (std::size_t i = b; i < e; ++i) {
      const auto& r = records[order[i]];
      bin.qea += *r.qea_f1;
      bin.qae += *r.evidence_f1;
      bin.eaq += *r.eaq_f1;
    }
    const double scale = 100.0 / static_cast<double>(bin.count);
    bin.qea *= scale;
    bin.qae *= scale;
    bin.eaq *= scale;
    qea.push_back(bin.qea);
    qae.push_back(bin.qae);
    eaq.push_back(bin.eaq);
    out.bins.push_back(bin);
  }
  out.qea_qae = fit_line(qea, qae);
  out.qea_eaq = fit_line(qea, eaq);
  out.qae_eaq = fit_line(qae, eaq);
  return out;
}

namespace {

json fit_json(const LinearFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"degenerate", f.degenerate}};
}

json prob_json(const std::optional<double>& p) { return p ? json(*p) : json("undefined"); }

}  // namespace

std::string CorrelationReport::to_json() const {
  json j;
  j["requested_bins"] = requested_bins;
  j["bins_used"] = bins.size();
  j["reduced"] = reduced;
  j["bins"] = json::array();
  for (const auto& b : bins) j["bins"].push_back({{"count", b.count}, {"qea", b.qea}, {"qae", b.qae}, {"eaq", b.eaq}});
  j["fits"] = {{"qea_qae", fit_json(qea_qae)}, {"qea_eaq", fit_json(qea_eaq)}, {"qae_eaq", fit_json(qae_eaq)}};
  return j.dump(2);
}

std::string CorrelationReport::to_tsv() const {
  std::ostringstream out;
  out.precision(17);
  out << "qea\tqae\teaq\n";
  for (const auto& b : bins) out << b.qea << '\t' << b.qae << '\t' << b.eaq << '\n';
  return out.str();
}

HallucinationReport hallucination_from_flags(const std::vector<bool>& question_only,
                                             const std::vector<bool>& with_document) {
  if (question_only.size() != with_document.size()) throw DataError("hallucination: flag lists differ in length");
  if (question_only.empty()) throw DataError("hallucination: no examples");
  HallucinationReport r;
  r.examples = question_only.size();
  std::size_t doc_given_correct = 0, doc_given_wrong = 0;
  for (std::size_t i = 0; i < question_only.size(); ++i) {
    if (question_only[i]) {
      ++r.question_correct;
      doc_given_correct += with_document[i];
    } else {
      ++r.question_wrong;
      doc_given_wrong += with_document[i];
    }
  }
  r.p_question = static_cast<double>(r.question_correct) / static_cast<double>(r.examples);
  if (r.question_correct) {
    r.p_document_given_correct = static_cast<double>(doc_given_correct) / static_cast<double>(r.question_correct);
  }
  if (r.question_wrong) {
    r.p_document_given_wrong = static_cast<double>(doc_given_wrong) / static_cast<double>(r.question_wrong);
  }
  return r;
}

HallucinationReport hallucination_probe(const CausalLm& lm, const Tokenizer& tok,
                                        const std::vector<TripletExample>& corpus, const TemplateSet& templates,
                                        std::size_t max_len, std::size_t max_new) {
  std::vector<bool> q_only, with_doc;
  for (const auto& ex : corpus) {
    SlotContents c = slot_contents(ex);
    c.evidence.clear();
    c.answer.clear();
    auto doc = generate_text(lm, tok, Task::qa_plain, c, templates, max_len, max_new);
    c.document.clear();
    auto bare = generate_text(lm, tok, Task::qa_plain, c, templates, max_len, max_new);
    q_only.push_back(exact_match(bare, ex.answers) == 1);
    with_doc.push_back(exact_match(doc, ex.answers) == 1);
  }
  return hallucination_from_flags(q_only, with_doc);
}

std::string HallucinationReport::to_json() const {
  json j;
  j["examples"] = examples;
  j["question_correct"] = question_correct;
  j["question_wrong"] = question_wrong;
  j["p_question"] = p_question;
  j["p_document_given_question_correct"] = prob_json(p_document_given_correct);
  j["p_document_given_question_wrong"] = prob_json(p_document_given_wrong);
  return j.dump(2);
}

std::string HallucinationReport::to_tsv() const {
  std::ostringstream out;
  out.precision(17);
  auto cell = [&](const std::optional<double>& p) {
    if (p) out << *p;
    else out << "undefined";
  };
  out << "statistic\tvalue\n";
  out << "p_question\t" << p_question << '\n';
  out << "p_document_given_question_correct\t";
  cell(p_document_given_correct);
  out << "\np_document_given_question_wrong\t";
  cell(p_document_given_wrong);
  out << '\n';
  return out.str();
}

namespace {

// Adds, per layer, the head-mean attention mass that each query row in `query`
// puts on the key positions of each segment in `keys`.
void accumulate(const ForwardOutput& out, const SegmentRange& query, const std::vector<SegmentRange>& keys,
                std::vector<std::vector<double>>& sums, std::size_t& rows) {
  if (out.attention.empty()) throw DataError("attention_stats: backbone returned no attention capture");
  for (std::size_t l = 0; l < out.attention.size(); ++l) {
    const auto& heads = out.attention[l];
    if (heads.empty()) throw DataError("attention_stats: layer without captured heads");
    for (std::size_t t = query.begin; t < query.end; ++t) {
      for (std::size_t s = 0; s < keys.size(); ++s) {
        double mass = 0.0;
        for (const auto& head : heads) {
          const auto& row = head.at(t);
          const std::size_t prefix = row.size() - (t + 1);
          for (std::size_t j = keys[s].begin; j < keys[s].end && j <= t; ++j) mass += row[prefix + j];
        }
        sums[l][s] += mass / static_cast<double>(heads.size());
      }
    }
  }
  rows += query.size();
}

}  // namespace

AttentionReport attention_stats(const CausalLm& lm, const Tokenizer& tok, const std::vector<TripletExample>& corpus,
                                const TemplateSet& templates, std::size_t max_len) {
  if (corpus.empty()) throw DataError("attention_stats: empty corpus");
  const std::size_t len = std::min(max_len, lm.max_positions());
  std::vector<std::vector<double>> qea, eaq;
  std::size_t qea_rows = 0, eaq_rows = 0;
  AttentionReport report;
  for (const auto& ex : corpus) {
    auto inst = render(Task::qea, ex, tok, len, templates);
    auto out = lm.forward(inst.token_ids, true);
    if (qea.empty()) {
      qea.assign(out.attention.size(), std::vector<double>(2, 0.0));
      eaq.assign(out.attention.size(), std::vector<double>(2, 0.0));
    }
    accumulate(out, inst.segment("answer"), {inst.segment("document"), inst.segment("evidence")}, qea, qea_rows);
    ++report.qea_instances;
    if (ex.evidence_indices.empty()) continue;
    auto e = render(Task::eaq, ex, tok, len, templates);
    auto eo = lm.forward(e.token_ids, true);
    accumulate(eo, e.segment("question"), {e.segment("evidence"), e.segment("answer")}, eaq, eaq_rows);
    ++report.eaq_instances;
  }
  for (std::size_t l = 0; l < qea.size(); ++l) {
    AttentionLayer row;
    row.layer = l;
    if (qea_rows) {
      row.qea_document = qea[l][0] / static_cast<double>(qea_rows);
      row.qea_evidence = qea[l][1] / static_cast<double>(qea_rows);
    }
    if (eaq_rows) {
      row.eaq_evidence = eaq[l][0] / static_cast<double>(eaq_rows);
      row.eaq_answer = eaq[l][1] / static_cast<double>(eaq_rows);
    }
    report.layers.push_back(row);
  }
  return report;
}

std::string AttentionReport::to_json() const {
  json j;
  j["qea_instances"] = qea_instances;
  j["eaq_instances"] = eaq_instances;
  j["layers"] = json::array();
  for (const auto& l : layers) {
    j["layers"].push_back({{"layer", l.layer},
                           {"qea_document", l.qea_document},
                           {"qea_evidence", l.qea_evidence},
                           {"eaq_evidence", l.eaq_evidence},
                           {"eaq_answer", l.eaq_answer}});
  }
  return j.dump(2);
}

std::string AttentionReport::to_tsv() const {
  std::ostringstream out;
  out.precision(17);
  out << "layer\tqea_document\tqea_evidence\teaq_evidence\teaq_answer\n";
  for (const auto& l : layers) {
    out << l.layer << '\t' << l.qea_document << '\t' << l.qea_evidence << '\t' << l.eaq_evidence << '\t'
        << l.eaq_answer << '\n';
  }
  return out.str();
}

}  // namespace tqa
