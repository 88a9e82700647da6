#include "tripletqa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <optional>
#include <regex>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tripletqa/errors.hpp"
#include "tripletqa/tokenizer.hpp"

namespace tqa {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_ws(s[b])) ++b;
  while (e > b && is_ws(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void push_unique(std::vector<std::string>& v, std::string s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(std::move(s));
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Splits MultiRC paragraph markup ("<b>Sent 1: </b>...<br>") into sentences.
std::vector<std::string> split_multirc_paragraph(const std::string& text) {
  static const std::regex marker(R"(<b>\s*Sent\s+\d+\s*:\s*</b>)");
  static const std::regex br(R"(<br\s*/?>)");
  std::vector<std::string> out;
  std::sregex_token_iterator it(text.begin(), text.end(), marker, -1), end;
  for (; it != end; ++it) {
    std::string s = trim(std::regex_replace(it->str(), br, " "));
    if (!s.empty()) out.push_back(std::move(s));
  }
  return out;
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  if (v.size() == 1) return v[0];
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.q1 = quantile(v, 0.25);
  s.median = quantile(v, 0.5);
  s.q3 = quantile(v, 0.75);
  return s;
}

}  // namespace

std::string_view to_string(AnswerType t) {
  switch (t) {
    case AnswerType::extractive: return "extractive";
    case AnswerType::abstractive: return "abstractive";
    case AnswerType::yes_no: return "yes_no";
    case AnswerType::unanswerable: return "unanswerable";
  }
  return "extractive";
}

AnswerType answer_type_from_string(std::string_view s) {
  if (s == "extractive") return AnswerType::extractive;
  if (s == "abstractive") return AnswerType::abstractive;
  if (s == "yes_no") return AnswerType::yes_no;
  if (s == "unanswerable") return AnswerType::unanswerable;
  throw DataError("unknown answer_type '" + std::string(s) + "'");
}

std::string TripletExample::evidence_text() const {
  std::string out;
  for (int idx : evidence_indices) {
    if (!out.empty()) out.push_back(' ');
    out += document.sentences[static_cast<std::size_t>(idx - 1)];
  }
  return out;
}

TripletExample make_example(std::string id, Document document, std::string question,
                            std::vector<int> evidence_indices, std::vector<std::string> answers,
                            AnswerType answer_type) {
  auto fail = [&](const std::string& why) { throw DataError("record " + id + ": " + why); };
  if (id.empty()) throw DataError("record without id");
  if (document.sentences.empty()) fail("document has no sentences");
  for (const auto& s : document.sentences) {
    if (trim(s).empty()) fail("document contains an empty sentence");
  }
  if (trim(question).empty()) fail("empty question");
  if (answers.empty()) fail("no reference answers");
  const auto n = static_cast<int>(document.sentences.size());
  for (int idx : evidence_indices) {
    if (idx < 1 || idx > n) {
      fail("evidence index " + std::to_string(idx) + " outside [1, " + std::to_string(n) + "]");
    }
  }
  std::sort(evidence_indices.begin(), evidence_indices.end());
  evidence_indices.erase(std::unique(evidence_indices.begin(), evidence_indices.end()),
                         evidence_indices.end());
  TripletExample ex;
  ex.id = std::move(id);
  ex.document = std::move(document);
  ex.question = std::move(question);
  ex.evidence_indices = std::move(evidence_indices);
  ex.answers = std::move(answers);
  ex.answer_type = answer_type;
  return ex;
}

LoadResult load_multirc(const std::filesystem::path& path, const MultircOptions& options) {
  LoadResult result;
  const std::string raw = read_file(path);
  if (trim(raw).empty()) return result;
  json root;
  try {
    root = json::parse(raw);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!root.is_object() || !root.contains("data") || !root["data"].is_array()) {
    throw DataError(path.string() + ": expected an object with a 'data' array");
  }
  std::size_t doc_index = 0;
  for (const auto& rec : root["data"]) {
    std::string doc_id = rec.is_object() && rec.contains("id") && rec["id"].is_string()
                             ? rec["id"].get<std::string>()
                             : "record-" + std::to_string(doc_index);
    ++doc_index;
    if (!rec.is_object() || !rec.contains("paragraph") || !rec["paragraph"].is_object()) {
      result.rejected.push_back({doc_id, "missing paragraph object"});
      continue;
    }
    const auto& para = rec["paragraph"];
    if (!para.contains("text") || !para["text"].is_string()) {
      result.rejected.push_back({doc_id, "paragraph without text"});
      continue;
    }
    Document doc{doc_id, split_multirc_paragraph(para["text"].get<std::string>())};
    if (doc.sentences.empty()) {
      result.rejected.push_back({doc_id, "paragraph has no sentence markers"});
      continue;
    }
    if (!para.contains("questions") || !para["questions"].is_array()) {
      result.rejected.push_back({doc_id, "paragraph without questions array"});
      continue;
    }
    std::size_t q_index = 0;
    for (const auto& q : para["questions"]) {
      std::string qid = doc_id + "-q" + std::to_string(q_index++);
      try {
        if (!q.is_object() || !q.contains("question") || !q["question"].is_string()) {
          throw DataError("missing question text");
        }
        if (!q.contains("answers") || !q["answers"].is_array()) throw DataError("missing answers array");
        if (!q.contains("sentences_used") || !q["sentences_used"].is_array()) {
          throw DataError("missing sentences_used annotation");
        }
        std::vector<std::string> correct;
        for (const auto& a : q["answers"]) {
          if (!a.is_object() || !a.contains("text") || !a["text"].is_string()) {
            throw DataError("answer option without text");
          }
          if (a.value("isAnswer", false)) {
            std::string t = trim(a["text"].get<std::string>());
            if (!t.empty()) push_unique(correct, std::move(t));
          }
        }
        if (correct.empty()) {
          ++result.skipped_no_answer;
          continue;
        }
        if (options.join_answers) correct = {join(correct, ", ")};
        std::vector<int> evidence;
        for (const auto& s : q["sentences_used"]) {
          if (!s.is_number_integer()) throw DataError("non-integer sentence index");
          evidence.push_back(s.get<int>() - options.evidence_base + 1);
        }
        auto ex = make_example(qid, doc, trim(q["question"].get<std::string>()), std::move(evidence),
                               std::move(correct), AnswerType::abstractive);
        if (ex.evidence_indices.empty()) result.missing_evidence.push_back(ex.id);
        result.examples.push_back(std::move(ex));
      } catch (const DataError& e) {
        result.rejected.push_back({qid, e.what()});
      }
    }
  }
  return result;
}

LoadResult load_qasper(const std::filesystem::path& path) {
  LoadResult result;
  const std::string raw = read_file(path);
  if (trim(raw).empty()) return result;
  json root;
  try {
    root = json::parse(raw);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!root.is_object()) throw DataError(path.string() + ": expected an object keyed by paper id");

  for (const auto& [paper_id, paper] : root.items()) {
    if (!paper.is_object() || !paper.contains("qas") || !paper["qas"].is_array()) {
      result.rejected.push_back({paper_id, "paper without qas array"});
      continue;
    }
    Document doc{paper_id, {}};
    if (paper.contains("abstract") && paper["abstract"].is_string()) {
      std::string a = trim(paper["abstract"].get<std::string>());
      if (!a.empty()) doc.sentences.push_back(std::move(a));
    }
    if (paper.contains("full_text") && paper["full_text"].is_array()) {
      for (const auto& section : paper["full_text"]) {
        if (!section.is_object() || !section.contains("paragraphs")) continue;
        for (const auto& p : section["paragraphs"]) {
          if (!p.is_string()) continue;
          std::string t = trim(p.get<std::string>());
          if (!t.empty()) doc.sentences.push_back(std::move(t));
        }
      }
    }
    if (doc.sentences.empty()) {
      result.rejected.push_back({paper_id, "paper has no text"});
      continue;
    }

    std::size_t q_index = 0;
    for (const auto& qa : paper["qas"]) {
      std::string qid = qa.is_object() && qa.contains("question_id") && qa["question_id"].is_string()
                            ? qa["question_id"].get<std::string>()
                            : paper_id + "-q" + std::to_string(q_index);
      ++q_index;
      try {
        if (!qa.is_object() || !qa.contains("question") || !qa["question"].is_string()) {
          throw DataError("missing question text");
        }
        if (!qa.contains("answers") || !qa["answers"].is_array()) throw DataError("missing answers array");
        std::vector<std::string> refs;
        std::optional<AnswerType> type;
        std::set<int> evidence;
        for (const auto& wrapper : qa["answers"]) {
          if (!wrapper.is_object() || !wrapper.contains("answer") || !wrapper["answer"].is_object()) {
            throw DataError("annotation without answer object");
          }
          const auto& a = wrapper["answer"];
          std::string text;
          AnswerType t;
          if (a.value("unanswerable", false)) {
            text = "unanswerable";
            t = AnswerType::unanswerable;
          } else if (a.contains("yes_no") && a["yes_no"].is_boolean()) {
            text = a["yes_no"].get<bool>() ? "yes" : "no";
            t = AnswerType::yes_no;
          } else if (a.contains("extractive_spans") && a["extractive_spans"].is_array() &&
                     !a["extractive_spans"].empty()) {
            std::vector<std::string> spans;
            for (const auto& s : a["extractive_spans"]) {
              if (s.is_string() && !trim(s.get<std::string>()).empty()) spans.push_back(trim(s.get<std::string>()));
            }
            text = join(spans, ", ");
            t = AnswerType::extractive;
          } else if (a.contains("free_form_answer") && a["free_form_answer"].is_string()) {
            text = trim(a["free_form_answer"].get<std::string>());
            t = AnswerType::abstractive;
          } else {
            continue;
          }
          if (text.empty()) continue;
          if (!type) type = t;
          push_unique(refs, std::move(text));
          if (a.contains("evidence") && a["evidence"].is_array()) {
            for (const auto& ev : a["evidence"]) {
              if (!ev.is_string()) continue;
              auto needle = trim(ev.get<std::string>());
              auto it = std::find(doc.sentences.begin(), doc.sentences.end(), needle);
              if (it != doc.sentences.end()) {
                evidence.insert(static_cast<int>(it - doc.sentences.begin()) + 1);
              }
            }
          }
        }
        if (refs.empty()) {
          ++result.skipped_no_answer;
          continue;
        }
        auto ex = make_example(qid, doc, trim(qa["question"].get<std::string>()),
                               std::vector<int>(evidence.begin(), evidence.end()), std::move(refs), *type);
        if (ex.evidence_indices.empty()) result.missing_evidence.push_back(ex.id);
        result.examples.push_back(std::move(ex));
      } catch (const DataError& e) {
        result.rejected.push_back({qid, e.what()});
      }
    }
  }
  return result;
}

std::string to_canonical_line(const TripletExample& ex) {
  json j;
  j["id"] = ex.id;
  j["document_id"] = ex.document.id;
  j["sentences"] = ex.document.sentences;
  j["question"] = ex.question;
  j["evidence_indices"] = ex.evidence_indices;
  j["answers"] = ex.answers;
  j["answer_type"] = std::string(to_string(ex.answer_type));
  return j.dump();
}

TripletExample from_canonical_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("malformed record: ") + e.what());
  }
  std::string id = j.is_object() && j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : "?";
  try {
    return make_example(j.at("id").get<std::string>(),
                        Document{j.at("document_id").get<std::string>(),
                                 j.at("sentences").get<std::vector<std::string>>()},
                        j.at("question").get<std::string>(), j.at("evidence_indices").get<std::vector<int>>(),
                        j.at("answers").get<std::vector<std::string>>(),
                        answer_type_from_string(j.at("answer_type").get<std::string>()));
  } catch (const json::exception& e) {
    throw DataError("record " + id + ": " + e.what());
  }
}

std::vector<TripletExample> read_canonical(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TripletExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(from_canonical_line(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_canonical(const std::filesystem::path& path, const std::vector<TripletExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& ex : examples) out << to_canonical_line(ex) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::size_t document_token_length(const Document& doc) {
  std::size_t n = 0;
  for (const auto& s : doc.sentences) n += pretokenize(s).size();
  return n;
}

std::vector<std::pair<std::size_t, std::size_t>> equal_size_bins(std::size_t n, std::size_t bins) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (bins == 0) return out;
  std::size_t base = n / bins, extra = n % bins, begin = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    std::size_t size = base + (b < extra ? 1 : 0);
    out.emplace_back(begin, begin + size);
    begin += size;
  }
  return out;
}

std::array<std::vector<std::size_t>, 4> quartile_groups(const std::vector<double>& keys,
                                                        const std::vector<std::string>& ids) {
  if (keys.size() != ids.size()) throw DataError("quartile_groups: keys/ids size mismatch");
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (keys[a] != keys[b]) return keys[a] < keys[b];
    return ids[a] < ids[b];
  });
  std::array<std::vector<std::size_t>, 4> groups;
  auto bins = equal_size_bins(order.size(), 4);
  for (std::size_t g = 0; g < 4; ++g) {
    groups[g].assign(order.begin() + static_cast<std::ptrdiff_t>(bins[g].first),
                     order.begin() + static_cast<std::ptrdiff_t>(bins[g].second));
  }
  return groups;
}

CorpusStats compute_stats(const std::vector<TripletExample>& corpus) {
  if (corpus.empty()) throw DataError("compute_stats: empty corpus");
  CorpusStats st;
  st.example_count = corpus.size();
  std::vector<double> lengths, counts;
  std::vector<std::string> ids;
  for (const auto& ex : corpus) {
    lengths.push_back(static_cast<double>(document_token_length(ex.document)));
    counts.push_back(static_cast<double>(ex.document.sentences.size()));
    ids.push_back(ex.id);
    if (ex.evidence_indices.empty()) ++st.missing_evidence;
  }
  st.doc_length = summarize(lengths);
  st.sentence_count = summarize(counts);
  auto lg = quartile_groups(lengths, ids);
  auto sg = quartile_groups(counts, ids);
  for (std::size_t g = 0; g < 4; ++g) {
    for (auto i : lg[g]) st.length_groups[g].push_back(ids[i]);
    for (auto i : sg[g]) st.sentence_groups[g].push_back(ids[i]);
  }
  return st;
}

}  // namespace tqa
