#include <gtest/gtest.h>

#include <fstream>

#include "detox/baselines.hpp"
#include "detox/random.hpp"
#include "support.hpp"

using namespace detox;

namespace {

const std::filesystem::path kData = DETOX_TEST_DATA;

ToxicLexicon fixture_lexicon() { return load_lexicon(kData / "delete_lexicon.txt"); }

}  // namespace

TEST(Duplicate, ReturnsInputBytes) {
  EXPECT_EQ(duplicate("you are an idiot !"), "you are an idiot !");
  const std::string hi = "\xE0\xA4\xAF\xE0\xA4\xB9 \xE0\xA4\xAC\xE0\xA4\x95\xE0\xA4\xB5\xE0\xA4\xBE\xE0\xA4\xB8 \xE0\xA5\xA4";
  EXPECT_EQ(duplicate(hi), hi);
  EXPECT_EQ(duplicate(""), "");
}

TEST(DeleteLexicon, Examples) {
  const ToxicLexicon lex({"fucking", "god awful"});
  EXPECT_EQ(delete_lexicon("thats a great fucking point .", lex), "thats a great point .");
  EXPECT_EQ(delete_lexicon("god awful weather", lex), "weather");
  EXPECT_EQ(delete_lexicon("a perfectly fine sentence", lex), "a perfectly fine sentence");
}

TEST(DeleteLexicon, WholeWordsOnly) {
  const ToxicLexicon lex({"ass"});
  EXPECT_EQ(delete_lexicon("assemble the class", lex), "assemble the class");
  EXPECT_EQ(delete_lexicon("what an ASS", lex), "what an");
}

TEST(DeleteLexicon, LongestPhraseWins) {
  const ToxicLexicon lex({"god", "god awful", "awful"});
  EXPECT_EQ(lex.entries().front(), (ToxicLexicon::Entry{"god", "awful"}));
  EXPECT_EQ(delete_lexicon("a god awful day", lex), "a day");
}

void check_golden(const std::string& tsv, const ToxicLexicon& lex, int min_cases) {
  std::ifstream in(kData / tsv);
  ASSERT_TRUE(in) << tsv;
  std::string line;
  int cases = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    ASSERT_NE(tab, std::string::npos) << line;
    EXPECT_EQ(delete_lexicon(line.substr(0, tab), lex), line.substr(tab + 1)) << line;
    ++cases;
  }
  EXPECT_GE(cases, min_cases);
}

TEST(DeleteLexicon, GoldenFixtures) { check_golden("delete_golden.tsv", fixture_lexicon(), 20); }

TEST(DeleteLexicon, GoldenFixturesHindi) {
  check_golden("delete_golden_hi.tsv", load_lexicon(kData / "delete_lexicon_hi.txt", "hi"), 3);
}

TEST(DeleteLexicon, Devanagari) {
  const std::string bakvas = "\xE0\xA4\xAC\xE0\xA4\x95\xE0\xA4\xB5\xE0\xA4\xBE\xE0\xA4\xB8";
  const std::string yah = "\xE0\xA4\xAF\xE0\xA4\xB9";
  const std::string danda = "\xE0\xA5\xA4";
  const ToxicLexicon lex({bakvas}, "hi");
  EXPECT_EQ(delete_lexicon(yah + " " + bakvas + danda, lex), yah + " " + danda);
}

TEST(DeleteLexicon, IdempotentOnFuzzedStrings) {
  const auto lex = fixture_lexicon();
  const std::vector<std::string> pieces = {"god", "awful", "Ass", "assemble", "idiot", "IDIOT!", "stupid,", "(ass)",
                                           "fucking", "the", "a", ".", "!", "nice", "  ", "god,", "class"};
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    std::string s;
    const auto n = rng.below(12);
    for (std::uint64_t i = 0; i < n; ++i) s += pieces[rng.below(pieces.size())] + (rng.below(4) == 0 ? "" : " ");
    const std::string once = delete_lexicon(s, lex);
    ASSERT_EQ(delete_lexicon(once, lex), once) << '"' << s << '"';
    std::vector<std::string> cores;
    for (const auto& w : split_whitespace(once)) cores.emplace_back(strip_punctuation(ascii_lower(w)));
    for (std::size_t i = 0; i < cores.size(); ++i) {
      if (!cores[i].empty()) {
        EXPECT_EQ(lex.match_at(cores, i), 0u) << once;
      }
    }
  }
}

TEST(DeleteLexicon, SurvivorsAppearInInputOrder) {
  const auto lex = fixture_lexicon();
  const std::string in = "you stupid , stupid man . a fine idiot day";
  const auto words = split_whitespace(in);
  std::size_t cursor = 0;
  for (const auto& w : split_whitespace(delete_lexicon(in, lex))) {
    while (cursor < words.size() && words[cursor] != w) ++cursor;
    ASSERT_LT(cursor, words.size()) << w;
    ++cursor;
  }
}

TEST(Lexicon, PunctuationOnlyWordRejected) {
  try {
    ToxicLexicon({"!!"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
}

TEST(LoadLexicon, LowercasesDedupsAndSkipsComments) {
  const auto lex = fixture_lexicon();
  EXPECT_EQ(lex.size(), 9u);
  const auto phrases = lex.phrases();
  EXPECT_EQ(phrases.front(), "god awful");
  EXPECT_NE(std::find(phrases.begin(), phrases.end(), "idiot"), phrases.end());
  EXPECT_EQ(lex.lang(), "en");
}

TEST(LoadLexicon, EmptyAndMissing) {
  scratch::TempDir dir;
  scratch::write_file(dir / "empty.txt", "# nothing\n\n   \n");
  try {
    load_lexicon(dir / "empty.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyLexicon);
  }
  EXPECT_THROW(load_lexicon(dir / "absent.txt"), Error);
}

TEST(TranslateLexicon, IdentityKeepsEntries) {
  const auto lex = fixture_lexicon();
  const auto t = translate_lexicon(lex, IdentityTranslator("en"));
  EXPECT_TRUE(t.lexicon == lex);
  EXPECT_EQ(t.provenance.size(), lex.size());
}

TEST(TranslateLexicon, DictionaryAndMerge) {
  const std::string bakvas = "\xE0\xA4\xAC\xE0\xA4\x95\xE0\xA4\xB5\xE0\xA4\xBE\xE0\xA4\xB8";
  const ToxicLexicon lex({"shit", "crap"});
  const auto t = translate_lexicon(lex, DictionaryTranslator({{"shit", bakvas}, {"crap", bakvas}}, "hi"));
  EXPECT_EQ(t.lexicon.size(), 1u);
  EXPECT_EQ(t.lexicon.phrases(), std::vector<std::string>{bakvas});
  EXPECT_EQ(t.lexicon.lang(), "hi");
  EXPECT_EQ(t.provenance.size(), 2u);
}

TEST(TranslateLexicon, FailuresAreCollected) {
  const ToxicLexicon lex({"aa", "bb", "cc"});
  const FunctionTranslator flaky(
      [](std::string_view s) -> std::string {
        if (s == "aa") throw std::runtime_error("service down");
        if (s == "bb") return "  ";
        return "ok";
      },
      "hi");
  try {
    translate_lexicon(lex, flaky);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TranslationFailed);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2 lexicon entries"), std::string::npos);
    EXPECT_NE(msg.find("aa"), std::string::npos);
    EXPECT_NE(msg.find("bb"), std::string::npos);
    EXPECT_EQ(msg.find("cc"), std::string::npos);
  }
}
