#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "detox/report.hpp"
#include "detox/toy.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace detox;

namespace {

struct ThresholdClassifier {
  std::map<std::string, double> table;
  double classify(std::string_view t) const { return table.at(std::string(t)); }
};

class TableLM final : public LanguageModelScorer {
 public:
  explicit TableLM(std::map<std::string, long double> p) : p_(std::move(p)) {}
  LmScore score(std::string_view text) const override {
    LmScore s;
    for (const auto& t : tokenize(text)) {
      s.nll -= std::log(p_.at(t));
      ++s.count;
    }
    return s;
  }

 private:
  std::map<std::string, long double> p_;
};

std::vector<std::string> random_corpus(Rng& rng, std::size_t n) {
  static const std::vector<std::string> words = {"the", "cat", "sat", "on", "mat", "a", "dog", "ran", "."};
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    const auto len = rng.below(9);
    for (std::uint64_t k = 0; k < len; ++k) s += (k ? " " : "") + words[rng.below(words.size())];
    out.push_back(s);
  }
  return out;
}

ToxicityClassifier untrained_classifier(const std::vector<ParallelPair>& pairs) {
  const Vocab v = build_vocab(pairs);
  return ToxicityClassifier(MicroModel(toy::micro_config(v.size()), v));
}

}  // namespace

TEST(Bleu, IdentityIsHundred) {
  const std::vector<std::string> x = {"the cat sat on the mat .", "a dog ran", "hi"};
  EXPECT_NEAR(bleu(x, x), 100.0, 1e-9);
}

TEST(Bleu, DisjointIsNearZero) {
  EXPECT_LT(bleu({"alpha beta gamma delta"}, {"one two three four"}), 1e-6);
}

TEST(Bleu, BrevityPenaltyExample) {
  // c = 3, r = 4: p1 = p2 = p3 = 1, no 4-grams in the candidate.
  const double got = bleu({"the cat sat"}, {"the cat sat down"});
  EXPECT_NEAR(got, oracle::bleu({"the cat sat"}, {"the cat sat down"}), 1e-9);
  EXPECT_NEAR(got, 100.0 * std::exp(1.0 - 4.0 / 3.0) * std::pow(1e-9, 0.25), 1e-9);
}

TEST(Bleu, MatchesBruteForceOracle) {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 1 + rng.below(6);
    const auto cands = random_corpus(rng, n);
    const auto refs = random_corpus(rng, n);
    EXPECT_NEAR(bleu(cands, refs), oracle::bleu(cands, refs), 1e-9) << trial;
  }
}

TEST(Bleu, PairPermutationInvariant) {
  Rng rng(3);
  const auto cands = random_corpus(rng, 8);
  const auto refs = random_corpus(rng, 8);
  const auto perm = rng.permutation(8);
  std::vector<std::string> pc, pr;
  for (auto i : perm) {
    pc.push_back(cands[i]);
    pr.push_back(refs[i]);
  }
  EXPECT_DOUBLE_EQ(bleu(cands, refs), bleu(pc, pr));
}

TEST(Bleu, LengthMismatchAndEmpty) {
  try {
    bleu({"a"}, {"a", "b"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  EXPECT_THROW(bleu({}, {}), Error);
}

TEST(ContentSimilarity, BucketIsFnv32) {
  for (std::string t : {"a", "idiot", "<unk>", "hello"}) {
    EXPECT_EQ(HashedBagEmbedder::bucket(t, 256), oracle::fnv32(t) % 256);
  }
}

TEST(ContentSimilarity, IdentityAndDisjoint) {
  const HashedBagEmbedder emb;
  const std::vector<std::string> t = {"you are nice", "a b c a", ""};
  EXPECT_NEAR(embedding_similarity(emb, t, t), 100.0, 1e-6);
  // Two tokens that land in different buckets.
  std::string x = "w0", y;
  for (int i = 1; y.empty(); ++i) {
    const std::string c = "w" + std::to_string(i);
    if (HashedBagEmbedder::bucket(c, 256) != HashedBagEmbedder::bucket(x, 256)) y = c;
  }
  EXPECT_NEAR(embedding_similarity(emb, {x}, {y}), 0.0, 1e-12);
}

TEST(ContentSimilarity, HandComputedVectors) {
  const HashedBagEmbedder emb;
  ASSERT_NE(HashedBagEmbedder::bucket("a", 256), HashedBagEmbedder::bucket("b", 256));
  // (2, 1) / sqrt(5) against (1, 0).
  EXPECT_NEAR(embedding_similarity(emb, {"a a b"}, {"a"}), 100.0 * 2.0 / std::sqrt(5.0), 1e-9);
  const auto v = emb.embed("a a b");
  EXPECT_NEAR(v.norm(), 1.0, 1e-12);
  EXPECT_EQ(v.size(), 256);
}

TEST(Perplexity, UniformModelGivesVocabularySize) {
  const std::vector<std::string> texts = {"a b c", "d", "e f g h i j k"};
  for (std::size_t v : {2u, 10u, 100u}) EXPECT_EQ(perplexity(UniformLM(v), texts), static_cast<double>(v));
}

TEST(Perplexity, HandComputed) {
  EXPECT_DOUBLE_EQ(perplexity(TableLM({{"a", 1.0L}}), {"a a", "a"}), 1.0);
  EXPECT_NEAR(perplexity(TableLM({{"a", 0.5L}, {"b", 0.25L}}), {"a", "b"}), std::sqrt(8.0), 1e-12);
}

TEST(Perplexity, UnigramSmoothing) {
  const UnigramLM lm({"a a b", "c"});
  EXPECT_EQ(lm.tokens(), 4u);
  EXPECT_EQ(lm.types(), 3u);
  // (count + 1) / (4 + 3 + 1)
  EXPECT_EQ(lm.probability("a"), 3.0L / 8.0L);
  EXPECT_EQ(lm.probability("zzz"), 1.0L / 8.0L);
  EXPECT_NEAR(perplexity(lm, {"a zzz"}), std::sqrt(64.0 / 3.0), 1e-12);
}

TEST(Perplexity, EmptyInput) {
  EXPECT_THROW(perplexity(UniformLM(3), {}), Error);
  EXPECT_THROW(perplexity(UniformLM(3), {"", " "}), Error);
}

TEST(Accuracy, Arithmetic) {
  const ThresholdClassifier clf{{{"ok", 0.9}, {"bad", 0.1}, {"edge", 0.5}}};
  EXPECT_EQ(detox_accuracy(clf, {"ok", "ok"}), 100.0);
  EXPECT_EQ(detox_accuracy(clf, {"bad", "edge"}), 0.0);
  EXPECT_EQ(detox_accuracy(clf, {"ok", "ok", "ok", "bad"}), 75.0);
  EXPECT_EQ(detox_accuracy(clf, {"bad", "ok", "ok", "ok"}), 75.0);
  EXPECT_THROW(detox_accuracy(clf, {}), Error);
}

TEST(EvaluateSystem, DuplicateAgainstSource) {
  const auto test = toy::detox_corpus(10, 2);
  const auto clf = untrained_classifier(test);
  const HashedBagEmbedder emb;
  const UniformLM lm(10);
  std::vector<std::string> outs;
  for (const auto& p : test) outs.push_back(p.toxic);
  const auto row = evaluate_system("duplicate", outs, test, {clf, emb, lm});
  EXPECT_NEAR(row.bleu, 100.0, 1e-9);
  EXPECT_NEAR(row.cs, 100.0, 1e-6);
  EXPECT_EQ(row.ppl, 10.0);
  EXPECT_EQ(row.count, 10u);
  EXPECT_EQ(row.lang, "en");
  EXPECT_TRUE(row.warnings.empty());
  const auto gold = evaluate_system("duplicate", outs, test, {clf, emb, lm}, ReferenceMode::gold);
  EXPECT_LT(gold.bleu, 100.0);
}

TEST(EvaluateSystem, EmptyOutputsBecomeUnk) {
  const auto test = toy::detox_corpus(3, 2);
  const auto clf = untrained_classifier(test);
  const HashedBagEmbedder emb;
  const UniformLM lm(4);
  const auto row = evaluate_system("sys", {"", "x", " "}, test, {clf, emb, lm});
  ASSERT_EQ(row.warnings.size(), 2u);
  EXPECT_NE(row.warnings[0].find("output 0"), std::string::npos);
  EXPECT_THROW(evaluate_system("sys", {"x"}, test, {clf, emb, lm}), Error);
}

TEST(Report, JsonAndMarkdown) {
  EvalReport rep;
  rep.reference = ReferenceMode::gold;
  rep.fingerprint = config_fingerprint({{"method", "seq2seq"}});
  rep.rows.push_back({"seq2seq", "en", 50, 92.0, 41.25, 80.0, 12.5, {}});
  const auto j = rep.to_json();
  EXPECT_EQ(j["reference"], "gold");
  EXPECT_EQ(j["rows"][0]["BLEU"], 41.25);
  EXPECT_EQ(j["rows"][0]["system"], "seq2seq");
  const auto md = rep.to_markdown();
  EXPECT_NE(md.find("| seq2seq | en | 92.0 | 41.2 | 80.0 | 12.5 |"), std::string::npos) << md;
  EXPECT_NE(md.find(rep.fingerprint), std::string::npos);
  EXPECT_EQ(rep.fingerprint, config_fingerprint({{"method", "seq2seq"}}));
  EXPECT_NE(rep.fingerprint, config_fingerprint({{"method", "kt"}}));
}

namespace {

std::vector<std::vector<std::string>> read_csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
    } else {
      field += c;
    }
  }
  return rows;
}

std::vector<std::pair<std::string, std::vector<std::string>>> four_systems(const std::vector<ParallelPair>& test) {
  std::vector<std::pair<std::string, std::vector<std::string>>> s;
  for (std::string name : {"duplicate", "delete", "seq2seq", "kt"}) {
    std::vector<std::string> outs;
    for (const auto& p : test) outs.push_back(name + ": " + p.civil + ", \"q\"");
    s.emplace_back(name, outs);
  }
  return s;
}

}  // namespace

TEST(HumanEval, LayoutAndKey) {
  scratch::TempDir dir;
  const auto test = toy::detox_corpus(60, 5);
  const auto systems = four_systems(test);
  const auto ex = export_human_eval(systems, test, 50, 9, dir / "h.csv", dir / "key.csv");
  EXPECT_EQ(ex.rows, 200u);
  const auto rows = read_csv_rows(scratch::read_file(dir / "h.csv"));
  ASSERT_EQ(rows.size(), 201u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"row_id", "system_code", "source", "output", "accuracy", "content",
                                               "fluency"}));
  std::set<std::string> codes;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 7u);
    EXPECT_EQ(rows[i][0], std::to_string(i));
    codes.insert(rows[i][1]);
    EXPECT_EQ(rows[i][4], "");
    const std::size_t idx = ex.indices[(i - 1) / 4];
    EXPECT_EQ(rows[i][2], test[idx].toxic);
    // Blinded output text still belongs to the item it is listed with.
    EXPECT_NE(rows[i][3].find(test[idx].civil), std::string::npos);
    EXPECT_EQ(rows[i][3].find(rows[i][1]), std::string::npos);
  }
  EXPECT_EQ(codes, (std::set<std::string>{"S1", "S2", "S3", "S4"}));
  const auto key = read_csv_rows(scratch::read_file(dir / "key.csv"));
  ASSERT_EQ(key.size(), 5u);
  for (std::size_t i = 1; i < key.size(); ++i) EXPECT_EQ(ex.code_of.at(key[i][1]), key[i][0]);
  // Each output line decodes to the system named by the key.
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::string name;
    for (const auto& k : key) {
      if (k[0] == rows[i][1]) name = k[1];
    }
    EXPECT_EQ(rows[i][3].rfind(name + ": ", 0), 0u);
  }
}

TEST(HumanEval, DeterministicAndFullCoverage) {
  scratch::TempDir dir;
  const auto test = toy::detox_corpus(20, 5);
  const auto systems = four_systems(test);
  export_human_eval(systems, test, 20, 3, dir / "a.csv", dir / "ka.csv");
  const auto ex = export_human_eval(systems, test, 20, 3, dir / "b.csv", dir / "kb.csv");
  EXPECT_EQ(scratch::read_file(dir / "a.csv"), scratch::read_file(dir / "b.csv"));
  EXPECT_EQ(scratch::read_file(dir / "ka.csv"), scratch::read_file(dir / "kb.csv"));
  EXPECT_EQ(std::set<std::size_t>(ex.indices.begin(), ex.indices.end()).size(), 20u);
  export_human_eval(systems, test, 20, 4, dir / "c.csv", dir / "kc.csv");
  EXPECT_NE(scratch::read_file(dir / "a.csv"), scratch::read_file(dir / "c.csv"));
}

TEST(HumanEval, InsufficientOutputs) {
  scratch::TempDir dir;
  const auto test = toy::detox_corpus(10, 5);
  auto systems = four_systems(test);
  auto expect_code = [&](std::size_t n) {
    try {
      export_human_eval(systems, test, n, 1, dir / "h.csv", dir / "k.csv");
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InsufficientOutputs);
    }
  };
  expect_code(11);
  expect_code(0);
  systems[1].second.pop_back();
  expect_code(5);
}
