#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "slidelm/corpus/grammar.hpp"
#include "slidelm/error.hpp"

namespace slidelm::corpus {

enum class Role : std::uint8_t { kUser, kAssistant, kSpecial, kImage };

struct ImageSpan {
  std::size_t start = 0;
  std::size_t length = 0;

  bool operator==(const ImageSpan&) const = default;
};

struct TokenSeq {
  std::vector<int> ids;
  std::vector<Role> roles;          // one per id
  std::vector<bool> loss_mask;      // true where the token is a training target
  std::optional<ImageSpan> image_span;

  std::size_t size() const { return ids.size(); }
};

/// Closed-vocabulary whitespace tokenizer. Punctuation trailing a word is split
/// into its own token and re-attached without a space on detokenization, so
/// grammar output round-trips exactly.
class Tokenizer {
 public:
  static constexpr int kUser = 0;
  static constexpr int kAssistant = 1;
  static constexpr int kEnd = 2;
  static constexpr int kImage = 3;

  Tokenizer() {
    for (const char* s : {"<|user|>", "<|assistant|>", "<|end|>", "<|image|>", ".", ",", ":", "?"}) add(s);
    for (const auto& w : grammar::vocabulary_words()) add(w);
  }

  int vocab_size() const { return static_cast<int>(words_.size()); }

  int id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) throw InvalidArgument("out-of-vocabulary word: '" + std::string(word) + "'");
    return it->second;
  }
  bool contains(std::string_view word) const { return index_.contains(std::string(word)); }

  const std::string& word(int id) const {
    require(id >= 0 && id < vocab_size(), "token id out of range");
    return words_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> out;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && text[i] == ' ') ++i;
      std::size_t j = i;
      while (j < text.size() && text[j] != ' ') ++j;
      if (j > i) encode_chunk(text.substr(i, j - i), out);
      i = j;
    }
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int t : ids) {
      const std::string& w = word(t);
      if (!out.empty() && !is_punct(w)) out.push_back(' ');
      out += w;
    }
    return out;
  }

  TokenSeq tokenize(std::string_view text) const {
    TokenSeq seq;
    seq.ids = encode(text);
    seq.roles.assign(seq.ids.size(), Role::kUser);
    seq.loss_mask.assign(seq.ids.size(), false);
    return seq;
  }

  std::string detokenize(const TokenSeq& seq) const { return decode(seq.ids); }

  static bool is_punct(std::string_view w) { return w == "." || w == "," || w == ":" || w == "?"; }

 private:
  void add(std::string_view w) {
    if (index_.contains(std::string(w))) return;
    index_.emplace(std::string(w), static_cast<int>(words_.size()));
    words_.emplace_back(w);
  }

  void encode_chunk(std::string_view chunk, std::vector<int>& out) const {
    if (chunk.starts_with("<|")) {
      out.push_back(id(chunk));
      return;
    }
    std::size_t end = chunk.size();
    while (end > 0 && is_punct(chunk.substr(end - 1, 1))) --end;
    if (end > 0) out.push_back(id(chunk.substr(0, end)));
    for (std::size_t k = end; k < chunk.size(); ++k) out.push_back(id(chunk.substr(k, 1)));
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace slidelm::corpus
