#include "tripletqa/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "tripletqa/errors.hpp"

namespace tqa {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<bos>", "<eos>", "<unk>", "\n"};
  return specials;
}

bool is_word_byte(unsigned char c) {
  // Non-ASCII bytes are kept inside words so UTF-8 sequences stay intact.
  return c >= 0x80 || std::isalnum(c) != 0;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(std::move(word));
      word.clear();
    }
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      word.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (c == '\n') {
      flush();
      out.emplace_back("\n");
    } else if (std::isspace(c) != 0) {
      flush();
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

std::string canonical_text(std::string_view text) {
  std::string out;
  for (const auto& piece : pretokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += piece;
  }
  return out;
}

WordTokenizer::WordTokenizer(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = ids_.emplace(tokens_[i], static_cast<int>(i));
    if (!inserted) throw DataError("duplicate vocabulary entry '" + tokens_[i] + "'");
  }
}

WordTokenizer WordTokenizer::build(std::span<const std::string> texts) {
  const auto& specials = special_tokens();
  std::set<std::string> pieces;
  for (const auto& t : texts) {
    for (auto& p : pretokenize(t)) pieces.insert(std::move(p));
  }
  std::vector<std::string> tokens(specials.begin(), specials.end());
  for (const auto& p : pieces) {
    if (std::find(specials.begin(), specials.end(), p) == specials.end()) tokens.push_back(p);
  }
  return WordTokenizer(std::move(tokens));
}

WordTokenizer WordTokenizer::from_tokens(std::vector<std::string> tokens) {
  const auto& specials = special_tokens();
  if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin())) {
    throw DataError("vocabulary does not start with the special tokens");
  }
  return WordTokenizer(std::move(tokens));
}

std::vector<int> WordTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& p : pretokenize(text)) {
    auto it = ids_.find(p);
    ids.push_back(it == ids_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string WordTokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    }
    if (!out.empty()) out.push_back(' ');
    out += tokens_[static_cast<std::size_t>(id)];
  }
  return out;
}

bool WordTokenizer::contains(std::string_view piece) const {
  return ids_.find(std::string(piece)) != ids_.end();
}

}  // namespace tqa
