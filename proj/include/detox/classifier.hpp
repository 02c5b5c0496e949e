#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "detox/corpus.hpp"
#include "detox/methods.hpp"
#include "detox/micro_model.hpp"

namespace detox {

// Micro encoder plus sigmoid head. classify() is P(non-toxic).
class ToxicityClassifier final : public ToxicityScorer {
 public:
  explicit ToxicityClassifier(MicroModel model, std::string fingerprint = {})
      : model_(std::move(model)), fingerprint_(std::move(fingerprint)) {}

  double classify_tokens(const std::vector<std::string>& tokens) const {
    TokenSequence ids = model_.vocab().encode(tokens);
    if (ids.size() > model_.max_length() - 1) ids.resize(model_.max_length() - 1);
    return model_.classify(ids);
  }
  double classify(std::string_view text) const { return classify_tokens(tokenize(text)); }
  double p_toxic(const std::vector<std::string>& tokens) const override { return 1.0 - classify_tokens(tokens); }

  const MicroModel& model() const { return model_; }
  // Identifies the training split the classifier was fit on.
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  MicroModel model_;
  std::string fingerprint_;
};

struct ClassifierConfig {
  MicroConfig model{};
  std::size_t epochs = 5;
  std::size_t batch_size = 3;
  OptimizerConfig optimizer{};
  std::uint64_t seed = 1;
};

struct ClassifierTraining {
  ToxicityClassifier classifier;
  LossLog log;
  std::optional<double> dev_accuracy;  // percent; unset when dev is empty
};

inline std::string split_fingerprint(const std::vector<ParallelPair>& pairs) {
  std::uint64_t h = fnv1a64("");
  for (const auto& p : pairs) {
    h = fnv1a64(p.id, h);
    h = fnv1a64("\t", h);
    h = fnv1a64(p.toxic, h);
    h = fnv1a64("\t", h);
    h = fnv1a64(p.civil, h);
    h = fnv1a64("\n", h);
  }
  return hex64(h);
}

// Percent of dev texts on the right side of 0.5: toxic sides should score
// <= 0.5, civil sides > 0.5.
inline double classifier_accuracy(const ToxicityClassifier& clf, const std::vector<ParallelPair>& pairs) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no pairs to score");
  std::size_t correct = 0;
  for (const auto& p : pairs) {
    correct += clf.classify(p.toxic) <= 0.5 ? 1 : 0;
    correct += clf.classify(p.civil) > 0.5 ? 1 : 0;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(2 * pairs.size());
}

// Toxic sides are label 0, civil sides label 1; only the encoder and head
// receive gradient.
inline ClassifierTraining train_toxicity_classifier(const CorpusSplit& split, const Vocab& vocab,
                                                    const ClassifierConfig& cfg) {
  if (split.train.empty()) throw Error(ErrorCode::EmptySplit, "train split is empty");
  MicroModel model(cfg.model, vocab);
  LossSpec spec;
  spec.sequence = false;
  spec.aux = AuxBranch::encoder;
  spec.classify_target = true;
  MethodConfig mc;
  mc.epochs = cfg.epochs;
  mc.batch_size = cfg.batch_size;
  mc.optimizer = cfg.optimizer;
  mc.seed = cfg.seed;
  const auto data = make_examples(model, split.train);
  LossLog log = fit(model, data, spec, mc, cfg.epochs);
  ClassifierTraining out{ToxicityClassifier(std::move(model), split_fingerprint(split.train)), std::move(log), {}};
  if (!split.dev.empty()) out.dev_accuracy = classifier_accuracy(out.classifier, split.dev);
  return out;
}

}  // namespace detox
