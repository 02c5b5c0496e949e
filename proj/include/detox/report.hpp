#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "detox/classifier.hpp"
#include "detox/corpus.hpp"
#include "detox/metrics.hpp"

namespace detox {

enum class ReferenceMode { source, gold };

inline std::string_view to_string(ReferenceMode m) { return m == ReferenceMode::source ? "source" : "gold"; }

inline std::optional<ReferenceMode> parse_reference_mode(std::string_view s) {
  if (s == "source") return ReferenceMode::source;
  if (s == "gold") return ReferenceMode::gold;
  return std::nullopt;
}

struct EvalResources {
  const ToxicityClassifier& classifier;
  const SentenceEmbedder& embedder;
  const LanguageModelScorer& lm;
};

struct MetricRow {
  std::string system;
  std::string lang;
  std::size_t count = 0;
  double acc = 0.0;
  double bleu = 0.0;
  double cs = 0.0;
  double ppl = 0.0;
  std::vector<std::string> warnings;
};

// Empty outputs are scored as a single UNK token and listed in warnings.
inline MetricRow evaluate_system(std::string name, std::vector<std::string> outputs,
                                 const std::vector<ParallelPair>& test, const EvalResources& res,
                                 ReferenceMode ref = ReferenceMode::source) {
  detail::check_lengths(outputs.size(), test.size(), "evaluate_system");
  if (test.empty()) throw Error(ErrorCode::EmptyInput, "evaluate_system needs at least one test pair");
  MetricRow row;
  row.system = std::move(name);
  row.lang = std::string(to_string(test.front().lang));
  row.count = outputs.size();
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    if (tokenize(outputs[k]).empty()) {
      outputs[k] = "<unk>";
      row.warnings.push_back("output " + std::to_string(k) + " is empty; scored as <unk>");
    }
  }
  std::vector<std::string> sources, references;
  for (const auto& p : test) {
    sources.push_back(p.toxic);
    references.push_back(ref == ReferenceMode::source ? p.toxic : p.civil);
  }
  row.acc = detox_accuracy(res.classifier, outputs);
  row.bleu = bleu(outputs, references);
  row.cs = embedding_similarity(res.embedder, outputs, sources);
  row.ppl = perplexity(res.lm, outputs);
  for (double v : {row.acc, row.bleu, row.cs, row.ppl}) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteLoss, "non-finite metric for system " + row.system);
  }
  return row;
}

inline std::string config_fingerprint(const nlohmann::ordered_json& config) { return hex64(fnv1a64(config.dump())); }

struct EvalReport {
  std::vector<MetricRow> rows;
  ReferenceMode reference = ReferenceMode::source;
  std::string fingerprint;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["fingerprint"] = fingerprint;
    j["reference"] = std::string(to_string(reference));
    j["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      nlohmann::ordered_json o;
      o["system"] = r.system;
      o["lang"] = r.lang;
      o["count"] = r.count;
      o["ACC"] = r.acc;
      o["BLEU"] = r.bleu;
      o["CS"] = r.cs;
      o["PPL"] = r.ppl;
      o["warnings"] = r.warnings;
      j["rows"].push_back(std::move(o));
    }
    return j;
  }

  std::string to_markdown() const {
    std::ostringstream out;
    out << "| System | Lang | ACC | BLEU | CS | PPL |\n|---|---|---:|---:|---:|---:|\n";
    char buf[160];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), " | %.1f | %.1f | %.1f | %.1f |\n", r.acc, r.bleu, r.cs, r.ppl);
      out << "| " << r.system << " | " << r.lang << buf;
    }
    out << "\nBLEU reference: " << to_string(reference) << ". Config fingerprint: `" << fingerprint << "`.\n";
    return out.str();
  }
};

namespace detail {
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}
}  // namespace detail

struct HumanEvalExport {
  std::vector<std::size_t> indices;
  std::map<std::string, std::string> code_of;  // system name -> blinded code
  std::size_t rows = 0;
};

// Samples n test indices, then writes one rating row per (index, system)
// with the system order shuffled per index. Codes are assigned by a seeded
// permutation; the key file maps them back.
inline HumanEvalExport export_human_eval(const std::vector<std::pair<std::string, std::vector<std::string>>>& systems,
                                         const std::vector<ParallelPair>& test, std::size_t n, std::uint64_t seed,
                                         const std::filesystem::path& csv_path, const std::filesystem::path& key_path) {
  if (systems.empty()) throw Error(ErrorCode::InsufficientOutputs, "no systems to export");
  std::set<std::string> names;
  for (const auto& s : systems) {
    if (!names.insert(s.first).second) throw Error(ErrorCode::InvalidConfig, "duplicate system name " + s.first);
  }
  for (const auto& [name, outs] : systems) {
    if (outs.size() != test.size()) {
      throw Error(ErrorCode::InsufficientOutputs, "system " + name + " has " + std::to_string(outs.size()) +
                                                      " outputs for " + std::to_string(test.size()) + " test items");
    }
  }
  if (n < 1 || n > test.size()) {
    throw Error(ErrorCode::InsufficientOutputs,
                "cannot sample " + std::to_string(n) + " of " + std::to_string(test.size()) + " items");
  }
  Rng rng(seed);
  HumanEvalExport ex;
  const auto perm = rng.permutation(test.size());
  ex.indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n));
  const auto codes = rng.permutation(systems.size());
  for (std::size_t s = 0; s < systems.size(); ++s) {
    ex.code_of[systems[s].first] = "S" + std::to_string(codes[s] + 1);
  }

  std::ofstream csv(csv_path);
  if (!csv) throw Error(ErrorCode::Io, "cannot write " + csv_path.string());
  csv << "row_id,system_code,source,output,accuracy,content,fluency\n";
  std::vector<std::size_t> order(systems.size());
  for (std::size_t idx : ex.indices) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t s : order) {
      csv << ++ex.rows << ',' << ex.code_of[systems[s].first] << ',' << detail::csv_field(test[idx].toxic) << ','
          << detail::csv_field(systems[s].second[idx]) << ",,,\n";
    }
  }
  std::ofstream key(key_path);
  if (!key) throw Error(ErrorCode::Io, "cannot write " + key_path.string());
  key << "system_code,system_name\n";
  std::vector<std::pair<std::string, std::string>> by_code;
  for (const auto& [name, code] : ex.code_of) by_code.emplace_back(code, name);
  std::sort(by_code.begin(), by_code.end());
  for (const auto& [code, name] : by_code) key << code << ',' << detail::csv_field(name) << '\n';
  return ex;
}

}  // namespace detox
