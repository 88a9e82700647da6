#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tqa {

// Splits text the way the toy tokenizer sees it: ASCII-lowercased, runs of
// word characters form one piece, every punctuation character is its own
// piece, newlines are kept as "\n" pieces and other whitespace is dropped.
std::vector<std::string> pretokenize(std::string_view text);

// The canonical form of `text` under pretokenize: pieces joined by one space.
std::string canonical_text(std::string_view text);

// Tokenizer contract shared by the toy tokenizer and plugged-in subword
// tokenizers of real backbones.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  // Special tokens are dropped from the decoded text.
  virtual std::string decode(std::span<const int> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual int bos() const = 0;
  virtual int eos() const = 0;
  virtual int pad() const = 0;
};

class WordTokenizer final : public Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNewline = 4;

  // Vocabulary from the pieces of `texts`, specials first, then pieces in
  // lexicographic order so the id assignment does not depend on input order.
  static WordTokenizer build(std::span<const std::string> texts);
  // Restores a tokenizer from its token list (index == id).
  static WordTokenizer from_tokens(std::vector<std::string> tokens);

  std::vector<int> encode(std::string_view text) const override;
  std::string decode(std::span<const int> ids) const override;
  std::size_t vocab_size() const override { return tokens_.size(); }
  int bos() const override { return kBos; }
  int eos() const override { return kEos; }
  int pad() const override { return kPad; }
  int unk() const { return kUnk; }

  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(std::string_view piece) const;

 private:
  explicit WordTokenizer(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace tqa
