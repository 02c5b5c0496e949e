#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "detox/corpus.hpp"
#include "detox/error.hpp"
#include "detox/random.hpp"
#include "detox/text.hpp"

namespace detox {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kNum = 4;
inline constexpr std::size_t kNumSpecials = 5;

class Vocab {
 public:
  Vocab() : Vocab(std::vector<std::string>{}) {}

  // Builds from non-special tokens in id order; specials are prepended.
  explicit Vocab(const std::vector<std::string>& tokens) {
    for (auto s : specials()) add(std::string(s));
    for (const auto& t : tokens) {
      if (index_.count(t)) throw Error(ErrorCode::InvalidConfig, "duplicate vocab token '" + t + "'");
      add(t);
    }
  }

  static constexpr std::array<std::string_view, kNumSpecials> specials() {
    return {"<pad>", "<s>", "</s>", "<unk>", "<num>"};
  }

  std::size_t size() const { return tokens_.size(); }

  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "token id " + std::to_string(id) + " outside vocab");
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

  TokenSequence encode(const std::vector<std::string>& tokens) const {
    TokenSequence ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(id(t));
    return ids;
  }

  TokenSequence encode_text(std::string_view text) const { return encode(tokenize(text)); }

  // Drops BOS/EOS/PAD; other ids map to their surface token.
  std::vector<std::string> decode(const TokenSequence& ids) const {
    std::vector<std::string> out;
    for (TokenId i : ids) {
      if (i == kPad || i == kBos || i == kEos) continue;
      out.push_back(token(i));
    }
    return out;
  }

  std::string decode_text(const TokenSequence& ids) const { return detokenize(decode(ids)); }

  const std::vector<std::string>& tokens() const { return tokens_; }

  // FNV-1a over every token followed by a newline.
  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a64("");
    for (const auto& t : tokens_) {
      h = fnv1a64(t, h);
      h = fnv1a64("\n", h);
    }
    return h;
  }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void add(std::string t) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Specials plus every token from both sides with frequency >= min_freq,
// ordered by (frequency desc, token asc).
inline Vocab build_vocab(const std::vector<ParallelPair>& pairs, std::size_t min_freq = 1) {
  if (min_freq < 1) throw Error(ErrorCode::InvalidConfig, "min_freq must be >= 1");
  std::map<std::string, std::size_t> freq;
  for (const auto& p : pairs) {
    for (const auto& t : tokenize(p.toxic)) ++freq[t];
    for (const auto& t : tokenize(p.civil)) ++freq[t];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  constexpr auto specials = Vocab::specials();
  for (auto& [tok, n] : freq) {
    const bool special = std::find(specials.begin(), specials.end(), tok) != specials.end();
    if (!special && n >= min_freq) entries.emplace_back(tok, n);
  }
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(entries.size());
  for (auto& e : entries) tokens.push_back(e.first);
  return Vocab(tokens);
}

// Encoder input framing: tokens followed by EOS.
inline TokenSequence frame_source(TokenSequence ids) {
  ids.push_back(kEos);
  return ids;
}

}  // namespace detox
