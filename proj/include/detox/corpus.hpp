#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "detox/error.hpp"
#include "detox/random.hpp"
#include "detox/text.hpp"
#include "detox/translate.hpp"

namespace detox {

enum class Language { en, hi };

inline std::string_view to_string(Language lang) { return lang == Language::en ? "en" : "hi"; }

inline std::optional<Language> parse_language(std::string_view code) {
  if (code == "en") return Language::en;
  if (code == "hi") return Language::hi;
  return std::nullopt;
}

inline constexpr std::size_t kMaxVariants = 5;

struct RawRecord {
  std::string id;
  Language lang = Language::en;
  std::string toxic;
  std::vector<std::string> civil_variants;
  std::optional<std::size_t> chosen_index;
  // Curation-time replacement of a civil side that is not in the record's
  // language; overrides the selected variant.
  std::optional<std::string> corrected_civil;

  bool operator==(const RawRecord&) const = default;
};

struct ParallelPair {
  std::string id;
  Language lang = Language::en;
  std::string toxic;
  std::string civil;

  bool operator==(const ParallelPair&) const = default;
};

struct SplitSizes {
  std::size_t train = 508;
  std::size_t dev = 100;
  std::size_t test = 500;
};

struct CorpusSplit {
  std::vector<ParallelPair> train;
  std::vector<ParallelPair> dev;
  std::vector<ParallelPair> test;
  std::uint64_t seed = 0;
};

struct LoadStats {
  std::size_t lines = 0;    // non-blank record lines read
  std::size_t records = 0;  // unique toxic sentences
  std::size_t merges = 0;   // lines folded into an earlier record
};

// ---------------------------------------------------------------------------
// Number placeholders

namespace detail {

// Letters, underscore and UTF-8 continuation/lead bytes. Digits are not word
// characters so that a digit run next to a placeholder keeps the placeholder
// standalone; this is what makes normalization idempotent.
inline bool is_word_byte(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalpha(u) || c == '_' || u >= 0x80;
}

inline bool standalone_at(std::string_view s, std::size_t i, std::string_view word) {
  if (s.substr(i, word.size()) != word) return false;
  if (i > 0 && is_word_byte(s[i - 1])) return false;
  const std::size_t end = i + word.size();
  return end >= s.size() || !is_word_byte(s[end]);
}

}  // namespace detail

inline constexpr std::string_view kNumToken = "<num>";

// Replaces "<number>", standalone "DIGIT" and "number", and every maximal
// run of decimal digits with "<num>". `replacements` receives the count.
inline std::string normalize_numbers(std::string_view text, std::size_t* replacements = nullptr) {
  std::string out;
  out.reserve(text.size());
  std::size_t count = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.substr(i, 8) == "<number>") {
      out += kNumToken;
      i += 8;
      ++count;
    } else if (detail::standalone_at(text, i, "DIGIT")) {
      out += kNumToken;
      i += 5;
      ++count;
    } else if (detail::standalone_at(text, i, "number")) {
      out += kNumToken;
      i += 6;
      ++count;
    } else if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      out += kNumToken;
      ++count;
    } else {
      out += text[i++];
    }
  }
  if (replacements) *replacements += count;
  return out;
}

inline std::string cleanup_text(std::string_view text, std::size_t* replacements = nullptr) {
  return collapse_whitespace(normalize_numbers(text, replacements));
}

// ---------------------------------------------------------------------------
// Raw corpus I/O

namespace detail {

inline std::string line_error(std::size_t line, std::string_view what) {
  return "line " + std::to_string(line) + ": " + std::string(what);
}

inline RawRecord parse_record(std::string_view line, std::size_t line_no) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::MalformedRecord, line_error(line_no, e.what()));
  }
  auto fail = [&](std::string_view what) {
    throw Error(ErrorCode::MalformedRecord, line_error(line_no, what));
  };
  if (!j.is_object()) fail("record is not a JSON object");
  for (const char* key : {"id", "lang", "toxic"}) {
    if (!j.contains(key) || !j[key].is_string()) fail(std::string("missing string field '") + key + "'");
  }
  RawRecord r;
  r.id = j["id"].get<std::string>();
  if (r.id.empty()) fail("empty id");
  auto lang = parse_language(j["lang"].get<std::string>());
  if (!lang) fail("unsupported language '" + j["lang"].get<std::string>() + "'");
  r.lang = *lang;
  r.toxic = j["toxic"].get<std::string>();
  if (collapse_whitespace(r.toxic).empty()) fail("empty toxic text");
  if (!j.contains("civil_variants") || !j["civil_variants"].is_array()) fail("missing array field 'civil_variants'");
  for (const auto& v : j["civil_variants"]) {
    if (!v.is_string()) fail("civil variant is not a string");
    auto s = v.get<std::string>();
    if (collapse_whitespace(s).empty()) fail("empty civil variant");
    r.civil_variants.push_back(std::move(s));
  }
  if (r.civil_variants.empty()) {
    throw Error(ErrorCode::MissingVariant, line_error(line_no, "record '" + r.id + "' has no civil variants"));
  }
  if (r.civil_variants.size() > kMaxVariants) fail("more than 5 civil variants");
  if (j.contains("chosen_index") && !j["chosen_index"].is_null()) {
    if (!j["chosen_index"].is_number_integer()) fail("chosen_index is not an integer");
    const auto idx = j["chosen_index"].get<long long>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= r.civil_variants.size()) fail("chosen_index out of range");
    r.chosen_index = static_cast<std::size_t>(idx);
  }
  if (j.contains("corrected_civil") && !j["corrected_civil"].is_null()) {
    if (!j["corrected_civil"].is_string()) fail("corrected_civil is not a string");
    r.corrected_civil = j["corrected_civil"].get<std::string>();
    if (collapse_whitespace(*r.corrected_civil).empty()) fail("empty corrected_civil");
  }
  return r;
}

}  // namespace detail

// Reads line-delimited records and merges lines sharing an identical raw
// toxic string: variants are concatenated in first-seen order and capped at
// five. The first line's id, language and annotation win; an annotation on a
// later line is kept only if its shifted index survives the cap.
inline std::vector<RawRecord> parse_raw(std::istream& in, LoadStats* stats = nullptr) {
  std::vector<RawRecord> records;
  std::unordered_map<std::string, std::size_t> by_toxic;
  LoadStats local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (collapse_whitespace(line).empty()) continue;
    ++local.lines;
    RawRecord r = detail::parse_record(line, line_no);
    auto [it, inserted] = by_toxic.try_emplace(r.toxic, records.size());
    if (inserted) {
      records.push_back(std::move(r));
      continue;
    }
    ++local.merges;
    RawRecord& base = records[it->second];
    const std::size_t offset = base.civil_variants.size();
    for (auto& v : r.civil_variants) {
      if (base.civil_variants.size() == kMaxVariants) break;
      base.civil_variants.push_back(std::move(v));
    }
    if (!base.chosen_index && r.chosen_index && offset + *r.chosen_index < base.civil_variants.size()) {
      base.chosen_index = offset + *r.chosen_index;
    }
    if (!base.corrected_civil && r.corrected_civil) base.corrected_civil = r.corrected_civil;
  }
  local.records = records.size();
  if (stats) *stats = local;
  return records;
}

inline std::vector<RawRecord> load_raw(const std::filesystem::path& path, LoadStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open corpus file " + path.string());
  return parse_raw(in, stats);
}

inline nlohmann::ordered_json to_json(const RawRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["lang"] = to_string(r.lang);
  j["toxic"] = r.toxic;
  j["civil_variants"] = r.civil_variants;
  if (r.chosen_index) j["chosen_index"] = *r.chosen_index;
  if (r.corrected_civil) j["corrected_civil"] = *r.corrected_civil;
  return j;
}

inline void write_raw(const std::vector<RawRecord>& records, std::ostream& out) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline void write_raw(const std::vector<RawRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  write_raw(records, out);
}

// ---------------------------------------------------------------------------
// Pair selection

enum class SelectionPolicy { annotated, first, shortest };

inline std::optional<SelectionPolicy> parse_policy(std::string_view s) {
  if (s == "annotated") return SelectionPolicy::annotated;
  if (s == "first") return SelectionPolicy::first;
  if (s == "shortest") return SelectionPolicy::shortest;
  return std::nullopt;
}

namespace detail {
inline std::size_t utf8_length(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}
}  // namespace detail

inline ParallelPair select_pair(const RawRecord& record, SelectionPolicy policy,
                                std::size_t* replacements = nullptr) {
  if (record.civil_variants.empty()) {
    throw Error(ErrorCode::MissingVariant, "record '" + record.id + "' has no civil variants");
  }
  std::size_t index = 0;
  switch (policy) {
    case SelectionPolicy::annotated:
      if (!record.chosen_index) {
        throw Error(ErrorCode::MissingAnnotation, "record '" + record.id + "' has no chosen_index");
      }
      index = *record.chosen_index;
      break;
    case SelectionPolicy::first:
      index = 0;
      break;
    case SelectionPolicy::shortest:
      for (std::size_t i = 1; i < record.civil_variants.size(); ++i) {
        if (detail::utf8_length(record.civil_variants[i]) < detail::utf8_length(record.civil_variants[index])) {
          index = i;
        }
      }
      break;
  }
  if (index >= record.civil_variants.size()) {
    throw Error(ErrorCode::MalformedRecord, "record '" + record.id + "' chosen_index out of range");
  }
  const std::string& civil = record.corrected_civil ? *record.corrected_civil : record.civil_variants[index];
  ParallelPair pair{record.id, record.lang, cleanup_text(record.toxic, replacements),
                    cleanup_text(civil, replacements)};
  if (pair.toxic.empty() || pair.civil.empty()) {
    throw Error(ErrorCode::MalformedRecord, "record '" + record.id + "' is empty after cleanup");
  }
  return pair;
}

// ---------------------------------------------------------------------------
// Pair files and splits

inline RawRecord as_record(const ParallelPair& p) {
  return RawRecord{p.id, p.lang, p.toxic, {p.civil}, 0, std::nullopt};
}

inline void write_pairs(const std::vector<ParallelPair>& pairs, const std::filesystem::path& path) {
  std::vector<RawRecord> records;
  records.reserve(pairs.size());
  for (const auto& p : pairs) records.push_back(as_record(p));
  write_raw(records, path);
}

// Pair files are already curated: one pair per line, no merging, even when
// two toxic sides became equal after number normalization.
inline std::vector<ParallelPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open pair file " + path.string());
  std::vector<ParallelPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (collapse_whitespace(line).empty()) continue;
    const RawRecord r = detail::parse_record(line, line_no);
    pairs.push_back(select_pair(r, r.chosen_index ? SelectionPolicy::annotated : SelectionPolicy::first));
  }
  return pairs;
}

// Seeded Fisher-Yates over pairs sorted by id, then partitioned in order.
inline CorpusSplit split_corpus(std::vector<ParallelPair> pairs, const SplitSizes& sizes, std::uint64_t seed) {
  const std::size_t need = sizes.train + sizes.dev + sizes.test;
  if (need > pairs.size()) {
    throw Error(ErrorCode::InsufficientData, "requested " + std::to_string(need) + " pairs but corpus has " +
                                                 std::to_string(pairs.size()));
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    if (pairs[i].id == pairs[i - 1].id) {
      throw Error(ErrorCode::MalformedRecord, "duplicate pair id '" + pairs[i].id + "'");
    }
  }
  Rng rng(seed);
  rng.shuffle(pairs);
  CorpusSplit split;
  split.seed = seed;
  auto take = [&](std::size_t from, std::size_t n) {
    return std::vector<ParallelPair>(pairs.begin() + static_cast<std::ptrdiff_t>(from),
                                     pairs.begin() + static_cast<std::ptrdiff_t>(from + n));
  };
  split.train = take(0, sizes.train);
  split.dev = take(sizes.train, sizes.dev);
  split.test = take(sizes.train + sizes.dev, sizes.test);
  return split;
}

inline void write_split(const CorpusSplit& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_pairs(split.train, dir / "train.jsonl");
  write_pairs(split.dev, dir / "dev.jsonl");
  write_pairs(split.test, dir / "test.jsonl");
  nlohmann::ordered_json manifest;
  manifest["seed"] = split.seed;
  manifest["sizes"] = {{"train", split.train.size()}, {"dev", split.dev.size()}, {"test", split.test.size()}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
}

inline CorpusSplit load_split(const std::filesystem::path& dir) {
  CorpusSplit split;
  split.train = load_pairs(dir / "train.jsonl");
  split.dev = load_pairs(dir / "dev.jsonl");
  split.test = load_pairs(dir / "test.jsonl");
  std::ifstream in(dir / "manifest.json");
  if (in) {
    auto manifest = nlohmann::json::parse(in, nullptr, false);
    if (manifest.is_object() && manifest.contains("seed")) split.seed = manifest["seed"].get<std::uint64_t>();
  }
  return split;
}

// Machine-translates train and dev on both sides; test is left in place
// because the evaluation set of the target language is built by hand and
// loaded separately.
inline CorpusSplit synthesize_translation_split(const CorpusSplit& split, const Translator& translator) {
  const auto lang = parse_language(translator.target_lang());
  if (!lang) throw Error(ErrorCode::InvalidConfig, "unsupported target language '" + translator.target_lang() + "'");
  auto convert = [&](const std::vector<ParallelPair>& in) {
    std::vector<ParallelPair> out;
    out.reserve(in.size());
    for (const auto& p : in) {
      try {
        out.push_back({p.id, *lang, translator.translate(p.toxic), translator.translate(p.civil)});
      } catch (const std::exception& e) {
        throw Error(ErrorCode::TranslationFailed, "pair '" + p.id + "': " + e.what());
      }
    }
    return out;
  };
  CorpusSplit result;
  result.train = convert(split.train);
  result.dev = convert(split.dev);
  result.test = split.test;
  result.seed = split.seed;
  return result;
}

}  // namespace detox
