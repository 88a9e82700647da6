#include "tripletqa/synthetic.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <string>

#include "tripletqa/errors.hpp"

namespace tqa {

namespace {

constexpr std::array<const char*, 16> kNames = {"alice", "bruno", "chen",  "dara",  "elif",  "farid",
                                                "greta", "hugo",  "ines",  "jonas", "kiri",  "lena",
                                                "marco", "nadia", "oscar", "priya"};
constexpr std::array<const char*, 12> kCities = {"paris", "lima",  "oslo",  "cairo", "quito", "hanoi",
                                                 "delhi", "accra", "riga",  "perth", "sofia", "tunis"};
constexpr std::array<const char*, 10> kJobs = {"baker", "pilot",   "nurse",  "judge",  "tailor",
                                               "miner", "painter", "farmer", "sailor", "chemist"};

template <typename A>
std::string pick(const A& items, std::mt19937_64& rng) {
  return items[static_cast<std::size_t>(rng() % items.size())];
}

}  // namespace

std::vector<TripletExample> synthetic_corpus(const SyntheticOptions& options) {
  if (options.sentences == 0 || options.sentences > kNames.size()) {
    throw ConfigError("synthetic corpus: sentences per document must be in [1, " + std::to_string(kNames.size()) + "]");
  }
  std::mt19937_64 rng(options.seed);
  std::vector<TripletExample> out;
  for (std::size_t i = 0; i < options.examples; ++i) {
    std::vector<std::string> names(kNames.begin(), kNames.end());
    std::shuffle(names.begin(), names.end(), rng);
    names.resize(options.sentences);

    Document doc;
    doc.id = "syn-" + std::to_string(i);
    std::vector<std::pair<std::string, std::string>> qa;
    for (const auto& name : names) {
      if (rng() % 2 == 0) {
        auto city = pick(kCities, rng);
        doc.sentences.push_back(name + " lives in " + city + " .");
        qa.emplace_back("where does " + name + " live ?", city);
      } else {
        auto job = pick(kJobs, rng);
        doc.sentences.push_back(name + " works as a " + job + " .");
        qa.emplace_back("what job does " + name + " have ?", job);
      }
    }
    const auto target = static_cast<std::size_t>(rng() % names.size());
    auto [question, answer] = qa[target];
    if (options.answer_in_question) question = question.substr(0, question.size() - 2) + " , " + answer + " ?";
    auto id = doc.id + "-q0";
    out.push_back(make_example(std::move(id), std::move(doc), question, {static_cast<int>(target + 1)}, {answer},
                               AnswerType::extractive));
  }
  return out;
}

}  // namespace tqa
