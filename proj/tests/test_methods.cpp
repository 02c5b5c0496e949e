#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "detox/methods.hpp"
#include "detox/toy.hpp"
#include "support.hpp"

using namespace detox;

namespace {

struct ToyFixture {
  CorpusSplit split;
  CorpusSplit aux;
  Vocab vocab;
  MicroConfig config;

  explicit ToyFixture(std::size_t n_train = 200) {
    split = split_corpus(toy::detox_corpus(), {n_train, 0, 0}, 1);
    aux = split_corpus(toy::aux_corpus(), toy::kAuxSplitSizes, 1);
    auto all = split.train;
    all.insert(all.end(), aux.train.begin(), aux.train.end());
    vocab = build_vocab(all);
    config = toy::micro_config(vocab.size());
  }
  MicroModel model() const { return MicroModel(config, vocab); }
};

MethodConfig quick(Method m, std::size_t epochs = 2) {
  MethodConfig c = toy::method_config(m);
  c.epochs = epochs;
  return c;
}

const FunctionScorer& constant_scorer() {
  static const FunctionScorer s([](const std::vector<std::string>&) { return 0.7; });
  return s;
}

}  // namespace

TEST(LossSpecFor, MapsEachMethod) {
  MethodConfig c;
  c.method = Method::mt_cls_gr_ip;
  c.lambda = 0.25;
  c.aux_weight = 3.0;
  const auto gr = loss_spec_for(c);
  EXPECT_EQ(gr.aux, AuxBranch::encoder);
  EXPECT_TRUE(gr.reverse_gradient);
  EXPECT_EQ(gr.lambda, 0.25);
  EXPECT_EQ(gr.aux_weight, 3.0);
  c.method = Method::mt_cls_ip;
  EXPECT_FALSE(loss_spec_for(c).reverse_gradient);
  c.method = Method::mt_cls_op;
  EXPECT_EQ(loss_spec_for(c).aux, AuxBranch::decoder);
  c.method = Method::del_recon;
  EXPECT_TRUE(loss_spec_for(c).reconstruction);
  c.method = Method::seq2seq;
  EXPECT_EQ(loss_spec_for(c).aux, AuxBranch::none);
}

TEST(MethodConfig, Validation) {
  MethodConfig c;
  c.threshold = 1.5;
  EXPECT_THROW(c.validate(), Error);
  c.threshold = 0.5;
  c.aux_weight = -1;
  EXPECT_THROW(c.validate(), Error);
  c.aux_weight = 1;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(MethodConfig, DefaultsMatchTheFullSizeSetup) {
  const MethodConfig c;
  EXPECT_EQ(c.aux_weight, 1.0);
  EXPECT_EQ(c.lambda, 1.0);
  EXPECT_EQ(c.threshold, 0.5);
  EXPECT_EQ(c.epochs, 5u);
  EXPECT_EQ(c.batch_size, 3u);
  EXPECT_EQ(c.optimizer.lr, 1e-5);
  EXPECT_EQ(c.optimizer.l2, 0.01);
}

TEST(TrainMethod, ZeroEpochsReturnsInitialization) {
  ToyFixture fx(40);
  const MicroModel init = fx.model();
  const auto r = train_method(fx.split, quick(Method::seq2seq, 0), init);
  EXPECT_TRUE(r.model == init);
  EXPECT_TRUE(r.log.empty());
}

TEST(TrainMethod, Seq2SeqLossFallsOnToyCorpus) {
  ToyFixture fx;
  const auto r = train_method(fx.split, quick(Method::seq2seq, 4), fx.model());
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_LT(r.log.back().loss.total, r.log.front().loss.total);
  EXPECT_EQ(r.log.front().items, fx.split.train.size());
  EXPECT_FALSE(r.log.front().loss.cls_ip.has_value());
}

TEST(TrainMethod, VariantsLogTheirComponent) {
  ToyFixture fx(30);
  EXPECT_TRUE(train_method(fx.split, quick(Method::mt_cls_ip, 1), fx.model()).log[0].loss.cls_ip.has_value());
  EXPECT_TRUE(train_method(fx.split, quick(Method::mt_cls_gr_ip, 1), fx.model()).log[0].loss.cls_gr_ip.has_value());
  EXPECT_TRUE(train_method(fx.split, quick(Method::mt_cls_op, 1), fx.model()).log[0].loss.cls_op.has_value());
}

TEST(TrainMethod, OutputHeadTargetsNonToxicForEveryPair) {
  ToyFixture fx(30);
  for (const auto& ex : make_examples(fx.model(), fx.split.train)) {
    EXPECT_EQ(ex.tgt_label, ToxicityLabel::non_toxic);
    EXPECT_EQ(ex.src_label, ToxicityLabel::toxic);
  }
}

TEST(TrainMethod, Deterministic) {
  ToyFixture fx(40);
  const auto a = train_method(fx.split, quick(Method::mt_cls_gr_ip), fx.model());
  const auto b = train_method(fx.split, quick(Method::mt_cls_gr_ip), fx.model());
  EXPECT_TRUE(a.model == b.model);
  EXPECT_EQ(a.log.back().loss.total, b.log.back().loss.total);
}

TEST(TrainMethod, RejectsMethodsNeedingExtraResources) {
  ToyFixture fx(10);
  EXPECT_THROW(train_method(fx.split, quick(Method::kt), fx.model()), Error);
  EXPECT_THROW(train_method(fx.split, quick(Method::del_recon), fx.model()), Error);
  CorpusSplit empty;
  try {
    train_method(empty, quick(Method::seq2seq), fx.model());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySplit);
  }
}

TEST(TrainMethod, NonFiniteLossNamesEpochAndBatch) {
  ToyFixture fx(10);
  MicroModel m = fx.model();
  m.weights().proj_b(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    train_method(fx.split, quick(Method::seq2seq), m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteLoss);
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos);
  }
}

TEST(TrainMethod, ZeroAuxWeightMatchesSeq2SeqUnderPlainDescent) {
  ToyFixture fx(24);
  MethodConfig base = quick(Method::seq2seq, 2);
  base.optimizer.kind = OptimizerKind::sgd;
  base.optimizer.lr = 0.05;
  const auto reference = train_method(fx.split, base, fx.model());
  for (Method m : {Method::mt_cls_ip, Method::mt_cls_gr_ip, Method::mt_cls_op}) {
    MethodConfig c = base;
    c.method = m;
    c.aux_weight = 0.0;
    const auto r = train_method(fx.split, c, fx.model());
    EXPECT_TRUE(r.model == reference.model) << to_string(m);
    EXPECT_EQ(r.log.back().loss.total, reference.log.back().loss.total) << to_string(m);
  }
}

TEST(TrainKt, StagesAndCheckpoints) {
  ToyFixture fx(30);
  MethodConfig c = quick(Method::kt, 0);
  c.stage1_epochs = 2;
  std::vector<std::pair<std::string, MicroModel>> saved;
  const auto r = train_kt(fx.aux, fx.split, c, fx.model(),
                          [&](const MicroModel& m, std::string_view stage) { saved.emplace_back(stage, m); });
  ASSERT_EQ(saved.size(), 2u);
  EXPECT_EQ(saved[0].first, "stage1");
  EXPECT_EQ(saved[1].first, "stage2");
  EXPECT_TRUE(saved[0].second == r.stage1);
  EXPECT_TRUE(r.model == r.stage1);
  EXPECT_EQ(r.stage1_log.size(), 2u);
  EXPECT_TRUE(r.stage2_log.empty());
  EXPECT_FALSE(r.stage1 == fx.model());
}

// A long stage 1 overfits the aux templates and loses this comparison, so
// stage 1 is kept short here.
TEST(TrainKt, StageTwoStartsBelowColdStart) {
  ToyFixture fx;
  MethodConfig c = quick(Method::kt, 1);
  c.stage1_epochs = 2;
  const auto kt = train_kt(fx.aux, fx.split, c, fx.model());
  const auto cold = train_method(fx.split, quick(Method::seq2seq, 1), fx.model());
  EXPECT_LT(kt.stage2_log.front().loss.total, cold.log.front().loss.total);
}

TEST(TrainKt, EmptySplits) {
  ToyFixture fx(10);
  try {
    train_kt(CorpusSplit{}, fx.split, quick(Method::kt), fx.model());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySplit);
  }
}

TEST(Attribution, ConstantClassifierScoresZero) {
  const auto scores = compute_attributions(constant_scorer(), {"a", "b", "c"});
  EXPECT_EQ(scores, (AttributionVector{0.0, 0.0, 0.0}));
}

TEST(Attribution, OcclusionOracle) {
  const LexiconOracleScorer clf({"shit"});
  const auto scores = compute_attributions(clf, {"this", "is", "shit"});
  EXPECT_NEAR(scores[2], 0.8, 1e-15);
  EXPECT_EQ(scores[0], 0.0);
  EXPECT_EQ(scores[1], 0.0);
}

TEST(Attribution, NegativeDeltaClipsAndSingleTokenUsesEmpty) {
  // Removing "nice" raises toxicity; the delta is clipped.
  const FunctionScorer clf([](const std::vector<std::string>& t) {
    return std::find(t.begin(), t.end(), "nice") != t.end() ? 0.2 : 0.6;
  });
  EXPECT_EQ(compute_attributions(clf, {"nice", "day"})[0], 0.0);
  const FunctionScorer by_length([](const std::vector<std::string>& t) { return t.empty() ? 0.05 : 0.95; });
  EXPECT_NEAR(compute_attributions(by_length, {"idiot"})[0], 0.9, 1e-15);
}

TEST(Attribution, EmptySequence) {
  try {
    compute_attributions(constant_scorer(), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySequence);
  }
}

TEST(DeleteByAttribution, ThresholdIsStrict) {
  const std::vector<std::string> t{"a", "b", "c"};
  EXPECT_EQ(delete_by_attribution(t, {0.6, 0.2, 0.7}, 0.5), std::vector<std::string>{"b"});
  EXPECT_EQ(delete_by_attribution(t, {0.5, 0.2, 0.0}, 0.5), t);
  EXPECT_TRUE(delete_by_attribution(t, {0.51, 0.9, 1.0}, 0.5).empty());
  EXPECT_EQ(delete_by_attribution(t, {1.0, 1.0, 1.0}, 1.0), t);
  EXPECT_THROW(delete_by_attribution(t, {0.1}, 0.5), Error);
}

TEST(DeleteByAttribution, OutputIsOrderedSubsequence) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> t;
    AttributionVector a;
    const auto n = 1 + rng.below(12);
    for (std::uint64_t i = 0; i < n; ++i) {
      t.push_back(static_cast<int>(i));
      a.push_back(rng.uniform01());
    }
    const auto out = delete_by_attribution(t, a, 0.5);
    EXPECT_TRUE(std::is_sorted(out.begin(), out.end()));
    for (int v : out) EXPECT_LE(a[static_cast<std::size_t>(v)], 0.5);
    EXPECT_EQ(out.size(), static_cast<std::size_t>(std::count_if(a.begin(), a.end(), [](double s) { return s <= 0.5; })));
  }
}

TEST(FilterToxicTokens, FullyToxicBecomesUnk) {
  const FunctionScorer clf([](const std::vector<std::string>& t) { return t.empty() ? 0.0 : 1.0; });
  const auto f = filter_toxic_tokens(clf, "idiot", 0.5);
  EXPECT_TRUE(f.emptied);
  EXPECT_EQ(f.kept, std::vector<std::string>{"<unk>"});
  EXPECT_EQ(f.deleted, std::vector<std::string>{"idiot"});

  std::vector<std::string> warnings;
  const auto cache = build_deletion_corpus({{"x1", Language::en, "idiot", "person"}}, clf, 0.5, &warnings);
  EXPECT_EQ(cache[0].pair.toxic, "<unk>");
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("x1"), std::string::npos);
}

TEST(TrainDelRecon, ThresholdOneKeepsInputs) {
  ToyFixture fx(20);
  const LexiconOracleScorer oracle(toy::planted_words());
  MethodConfig c = quick(Method::del_recon, 0);
  c.threshold = 1.0;
  const auto r = train_del_recon(fx.split, oracle, c, fx.model());
  for (std::size_t i = 0; i < r.cache.size(); ++i) {
    EXPECT_EQ(r.cache[i].pair.toxic, join(tokenize(fx.split.train[i].toxic)));
    EXPECT_TRUE(r.cache[i].deleted_tokens.empty());
  }
  EXPECT_TRUE(r.model == fx.model());
}

TEST(TrainDelRecon, CacheHasNoPlantedTokens) {
  ToyFixture fx(60);
  scratch::TempDir dir;
  const LexiconOracleScorer oracle(toy::planted_words());
  const auto r = train_del_recon(fx.split, oracle, quick(Method::del_recon, 1), fx.model(), dir / "cache.jsonl");
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_TRUE(r.log[0].loss.reconstruction.has_value());
  const auto words = toy::planted_words();
  const std::set<std::string> planted(words.begin(), words.end());
  std::istringstream in(scratch::read_file(dir / "cache.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    const auto j = nlohmann::json::parse(line);
    for (const auto& tok : tokenize(j["toxic"].get<std::string>())) EXPECT_FALSE(planted.count(tok)) << line;
    ASSERT_TRUE(j["deleted_tokens"].is_array());
    EXPECT_EQ(j["deleted_tokens"].size(), 1u) << line;
    EXPECT_TRUE(planted.count(j["deleted_tokens"][0].get<std::string>()));
    EXPECT_EQ(j["civil_variants"].size(), 1u);
  }
  EXPECT_EQ(lines, fx.split.train.size());
}

TEST(LossLog, CsvLayout) {
  LossLog log(1);
  log[0].epoch = 1;
  log[0].loss.seq2seq = 2.5;
  log[0].loss.cls_op = 0.25;
  log[0].loss.total = 2.75;
  log[0].wall_ms = 3;
  std::ostringstream out;
  write_loss_log(log, out);
  EXPECT_EQ(out.str(), "epoch,seq2seq,cls_ip,cls_gr_ip,cls_op,reconstruction,total,wall_ms\n1,2.5,,,0.25,,2.75,3.000\n");
}
