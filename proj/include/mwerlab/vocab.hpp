#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mwerlab/errors.hpp"

namespace mwerlab {

using TokenId = std::int32_t;

/// Output token inventory. Contains a blank and a word-separator token.
class Vocab {
 public:
  Vocab() = default;

  Vocab(std::vector<std::string> tokens, TokenId blank_id, TokenId word_sep_id)
      : tokens_(std::move(tokens)), blank_id_(blank_id), word_sep_id_(word_sep_id) {
    if (tokens_.size() < 3) throw ConfigError("vocab needs at least 3 tokens");
    if (!valid(blank_id_) || !valid(word_sep_id_) || blank_id_ == word_sep_id_)
      throw ConfigError("vocab: blank and word separator must be distinct valid ids");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
        throw ConfigError("vocab: duplicate token '" + tokens_[i] + "'");
    }
  }

  /// Blank "<b>" at 0, separator "|" at 1, then one token per letter.
  static Vocab characters(const std::string& letters) {
    std::vector<std::string> t{"<b>", "|"};
    for (char c : letters) t.emplace_back(1, c);
    return Vocab(std::move(t), 0, 1);
  }

  static Vocab lowercase() { return characters("abcdefghijklmnopqrstuvwxyz"); }

  std::size_t size() const { return tokens_.size(); }
  TokenId blank_id() const { return blank_id_; }
  TokenId word_sep_id() const { return word_sep_id_; }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool valid(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

  TokenId id(const std::string& tok) const {
    auto it = index_.find(tok);
    if (it == index_.end()) throw ContractError("vocab: unknown token '" + tok + "'");
    return it->second;
  }
  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

  /// Non-blank ids in ascending order.
  std::vector<TokenId> labels() const {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      if (static_cast<TokenId>(i) != blank_id_) out.push_back(static_cast<TokenId>(i));
    return out;
  }

  /// Space-separated token list followed by the two special ids.
  std::string to_text() const {
    std::ostringstream os;
    os << "vocab=";
    for (std::size_t i = 0; i < tokens_.size(); ++i) os << (i ? " " : "") << tokens_[i];
    os << "\nblank_id=" << blank_id_ << "\nword_sep_id=" << word_sep_id_ << "\n";
    return os.str();
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.blank_id_ == b.blank_id_ && a.word_sep_id_ == b.word_sep_id_;
  }

 private:
  std::vector<std::string> tokens_;
  TokenId blank_id_ = 0;
  TokenId word_sep_id_ = 1;
  std::unordered_map<std::string, TokenId> index_;
};

/// A blank-free label sequence.
struct TokenSeq {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  TokenId operator[](std::size_t i) const { return ids[i]; }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
  friend auto operator<=>(const TokenSeq&, const TokenSeq&) = default;
};

inline void require_blank_free(const TokenSeq& y, const Vocab& v) {
  for (TokenId id : y.ids) {
    if (!v.valid(id)) throw ContractError("token id out of range: " + std::to_string(id));
    if (id == v.blank_id()) throw ContractError("blank inside a label sequence");
  }
}

/// Splits on the separator, dropping empty words.
inline std::vector<std::vector<TokenId>> split_words(const TokenSeq& y, const Vocab& v) {
  std::vector<std::vector<TokenId>> words;
  std::vector<TokenId> cur;
  for (TokenId id : y.ids) {
    if (id == v.word_sep_id()) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(id);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline std::size_t word_count(const TokenSeq& y, const Vocab& v) { return split_words(y, v).size(); }

/// Character-level tokenisation: one token per character, ' ' maps to the separator.
inline TokenSeq tokenize(const std::string& text, const Vocab& v) {
  TokenSeq y;
  std::string bad;
  for (char c : text) {
    if (c == ' ') {
      y.ids.push_back(v.word_sep_id());
      continue;
    }
    const std::string s(1, c);
    if (!v.contains(s) || v.id(s) == v.blank_id() || v.id(s) == v.word_sep_id()) {
      if (bad.find(c) == std::string::npos) bad += c;
      continue;
    }
    y.ids.push_back(v.id(s));
  }
  if (!bad.empty()) throw ContractError("characters outside the alphabet: '" + bad + "'");
  return y;
}

inline std::string detokenize(const TokenSeq& y, const Vocab& v) {
  std::string s;
  for (TokenId id : y.ids) s += id == v.word_sep_id() ? std::string(" ") : v.token(id);
  return s;
}

}  // namespace mwerlab
