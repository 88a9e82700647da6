#pragma once

#include <cstdint>
#include <vector>

#include "tripletqa/corpus.hpp"

namespace tqa {

struct SyntheticOptions {
  std::size_t examples = 20;
  std::size_t sentences = 4;  // per document, at most the number of names
  std::uint64_t seed = 0;
  // Repeat the answer inside the question, so the document is not needed.
  bool answer_in_question = false;
};

// Small corpus of people facts ("X lives in Y .") where each question asks
// about one person of its own document and the evidence is that single
// sentence. Deterministic in the options.
std::vector<TripletExample> synthetic_corpus(const SyntheticOptions& options);

}  // namespace tqa
