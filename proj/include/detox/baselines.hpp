#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "detox/corpus.hpp"
#include "detox/error.hpp"
#include "detox/text.hpp"
#include "detox/translate.hpp"

namespace detox {

inline std::string duplicate(std::string_view text) { return std::string(text); }

// Lowercase word and phrase entries. Each entry is kept as its list of word
// cores (punctuation stripped); entries are ordered longest first.
class ToxicLexicon {
 public:
  using Entry = std::vector<std::string>;

  ToxicLexicon() = default;

  ToxicLexicon(const std::vector<std::string>& entries, std::string lang = "en") : lang_(std::move(lang)) {
    std::set<Entry> unique;
    for (const auto& raw : entries) {
      Entry e;
      for (const auto& w : split_whitespace(ascii_lower(raw))) {
        const std::string_view core = strip_punctuation(w);
        if (core.empty()) throw Error(ErrorCode::InvalidConfig, "lexicon entry '" + raw + "' has a punctuation-only word");
        e.emplace_back(core);
      }
      if (e.empty()) throw Error(ErrorCode::InvalidConfig, "blank lexicon entry");
      unique.insert(std::move(e));
    }
    entries_.assign(unique.begin(), unique.end());
    std::stable_sort(entries_.begin(), entries_.end(),
                     [](const Entry& a, const Entry& b) { return a.size() > b.size(); });
    for (std::size_t i = 0; i < entries_.size(); ++i) by_first_[entries_[i].front()].push_back(i);
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<std::string> phrases() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(join(e));
    return out;
  }
  const std::string& lang() const { return lang_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Length in words of the longest entry matching at words[i], or 0.
  std::size_t match_at(const std::vector<std::string>& cores, std::size_t i) const {
    auto it = by_first_.find(cores[i]);
    if (it == by_first_.end()) return 0;
    for (std::size_t idx : it->second) {
      const Entry& e = entries_[idx];
      if (i + e.size() > cores.size()) continue;
      if (std::equal(e.begin(), e.end(), cores.begin() + static_cast<std::ptrdiff_t>(i))) return e.size();
    }
    return 0;
  }

  bool operator==(const ToxicLexicon& o) const { return entries_ == o.entries_; }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::vector<std::size_t>> by_first_;
  std::string lang_ = "en";
};

namespace detail {
// One left-to-right pass; returns true if anything was removed. Punctuation
// attached to a removed word stays behind as its own token.
inline bool delete_pass(std::vector<std::string>& words, const ToxicLexicon& lex) {
  std::vector<std::string> cores;
  cores.reserve(words.size());
  for (const auto& w : words) cores.emplace_back(strip_punctuation(ascii_lower(w)));
  std::vector<std::string> out;
  bool changed = false;
  for (std::size_t i = 0; i < words.size();) {
    const std::size_t n = cores[i].empty() ? 0 : lex.match_at(cores, i);
    if (n == 0) {
      out.push_back(std::move(words[i++]));
      continue;
    }
    changed = true;
    for (std::size_t k = i; k < i + n; ++k) {
      std::string_view w = words[k];
      const std::string_view core = strip_punctuation(w);
      const auto at = static_cast<std::size_t>(core.data() - w.data());
      std::string residue = std::string(w.substr(0, at)) + std::string(w.substr(at + core.size()));
      if (!residue.empty()) out.push_back(std::move(residue));
    }
    i += n;
  }
  words = std::move(out);
  return changed;
}
}  // namespace detail

// Whole-word, case-insensitive, longest-phrase-first removal, repeated until
// nothing matches so that the result is a fixpoint.
inline std::string delete_lexicon(std::string_view text, const ToxicLexicon& lex) {
  std::vector<std::string> words = split_whitespace(text);
  while (detail::delete_pass(words, lex)) {
  }
  return join(words);
}

// One entry per line; blank lines and '#' comments are skipped.
inline ToxicLexicon load_lexicon(const std::filesystem::path& path, std::string lang = "en") {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open lexicon " + path.string());
  std::vector<std::string> entries;
  std::string line;
  while (std::getline(in, line)) {
    const std::string entry = collapse_whitespace(line);
    if (entry.empty() || entry.front() == '#') continue;
    entries.push_back(entry);
  }
  if (entries.empty()) throw Error(ErrorCode::EmptyLexicon, "lexicon " + path.string() + " has no entries");
  return ToxicLexicon(entries, std::move(lang));
}

struct LexiconTranslation {
  ToxicLexicon lexicon;
  std::vector<std::pair<std::string, std::string>> provenance;  // (source entry, translation)
};

// Translates entry by entry; failures are collected and reported together.
inline LexiconTranslation translate_lexicon(const ToxicLexicon& lex, const Translator& translator) {
  LexiconTranslation out;
  std::vector<std::string> translated;
  std::vector<std::string> failures;
  for (const auto& src : lex.phrases()) {
    try {
      std::string t = collapse_whitespace(translator.translate(src));
      if (t.empty() || strip_punctuation(t).empty()) {
        failures.push_back(src + " (empty translation)");
        continue;
      }
      out.provenance.emplace_back(src, t);
      translated.push_back(std::move(t));
    } catch (const std::exception& e) {
      failures.push_back(src + " (" + e.what() + ")");
    }
  }
  if (!failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " lexicon entries failed:";
    for (const auto& f : failures) msg += "\n  " + f;
    throw Error(ErrorCode::TranslationFailed, msg);
  }
  out.lexicon = ToxicLexicon(translated, translator.target_lang());
  return out;
}

}  // namespace detox
