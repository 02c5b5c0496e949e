#pragma once

#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace detox {

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// ASCII-only lowercasing; multi-byte UTF-8 sequences pass through untouched.
inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

// Trim and collapse internal whitespace runs to one space.
inline std::string collapse_whitespace(std::string_view s) { return join(split_whitespace(s)); }

namespace detail {

// Devanagari danda and double danda.
inline constexpr std::array<std::string_view, 2> kMultibytePunct = {"\xE0\xA5\xA4", "\xE0\xA5\xA5"};

// Placeholders that must survive tokenization as one token.
inline constexpr std::array<std::string_view, 2> kAtomicTokens = {"<num>", "<unk>"};

inline std::size_t punct_prefix(std::string_view w) {
  if (w.empty()) return 0;
  for (auto a : kAtomicTokens)
    if (w.starts_with(a)) return 0;
  if (std::ispunct(static_cast<unsigned char>(w.front()))) return 1;
  for (auto p : kMultibytePunct)
    if (w.starts_with(p)) return p.size();
  return 0;
}

inline std::size_t punct_suffix(std::string_view w) {
  if (w.empty()) return 0;
  for (auto a : kAtomicTokens)
    if (w.ends_with(a)) return 0;
  if (std::ispunct(static_cast<unsigned char>(w.back()))) return 1;
  for (auto p : kMultibytePunct)
    if (w.ends_with(p)) return p.size();
  return 0;
}

}  // namespace detail

inline bool is_punctuation_token(std::string_view w) {
  std::size_t i = 0;
  while (i < w.size()) {
    const std::size_t n = detail::punct_prefix(w.substr(i));
    if (n == 0) return false;
    i += n;
  }
  return !w.empty();
}

// Strip leading and trailing punctuation; keeps atomic placeholders intact.
inline std::string_view strip_punctuation(std::string_view w) {
  while (std::size_t n = detail::punct_prefix(w)) w.remove_prefix(n);
  while (std::size_t n = detail::punct_suffix(w)) w.remove_suffix(n);
  return w;
}

// Lowercase, split on whitespace, and detach leading/trailing punctuation
// characters as separate tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& raw : split_whitespace(ascii_lower(text))) {
    std::string_view w = raw;
    while (std::size_t n = detail::punct_prefix(w)) {
      out.emplace_back(w.substr(0, n));
      w.remove_prefix(n);
    }
    std::vector<std::string> trailing;
    while (std::size_t n = detail::punct_suffix(w)) {
      trailing.emplace_back(w.substr(w.size() - n));
      w.remove_suffix(n);
    }
    if (!w.empty()) out.emplace_back(w);
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
  }
  return out;
}

inline std::string detokenize(const std::vector<std::string>& tokens) { return join(tokens); }

}  // namespace detox
