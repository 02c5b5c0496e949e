#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <set>
#include <type_traits>
#include <string>
#include <vector>

#include <json.hpp>

#include "detox/backbone.hpp"
#include "detox/corpus.hpp"
#include "detox/text.hpp"

namespace detox {

struct EpochLog;

struct MethodConfig {
  Method method = Method::seq2seq;
  double aux_weight = 1.0;
  double lambda = 1.0;
  double threshold = 0.5;
  std::size_t epochs = 5;
  // kt stage-1 epochs; unset means the same as epochs.
  std::optional<std::size_t> stage1_epochs;
  std::size_t batch_size = 3;
  OptimizerConfig optimizer{};
  std::uint64_t seed = 1;  // batch order
  std::function<void(const EpochLog&)> on_epoch;  // progress hook, optional

  void validate() const {
    if (!(aux_weight >= 0.0)) throw Error(ErrorCode::InvalidConfig, "aux weight must be >= 0");
    if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "lambda must be >= 0");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(ErrorCode::InvalidConfig, "threshold must lie in [0, 1]");
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch size must be >= 1");
    if (!(optimizer.lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be > 0");
    if (!(optimizer.l2 >= 0.0)) throw Error(ErrorCode::InvalidConfig, "l2 must be >= 0");
  }
};

inline LossSpec loss_spec_for(const MethodConfig& cfg) {
  LossSpec spec;
  spec.aux_weight = cfg.aux_weight;
  spec.lambda = cfg.lambda;
  switch (cfg.method) {
    case Method::seq2seq:
    case Method::kt:
      break;
    case Method::mt_cls_ip:
      spec.aux = AuxBranch::encoder;
      break;
    case Method::mt_cls_gr_ip:
      spec.aux = AuxBranch::encoder;
      spec.reverse_gradient = true;
      break;
    case Method::mt_cls_op:
      spec.aux = AuxBranch::decoder;
      break;
    case Method::del_recon:
      spec.reconstruction = true;
      break;
  }
  return spec;
}

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown loss;  // summed over the epoch's batches, pre-update values
  std::size_t items = 0;
  double wall_ms = 0.0;
};
using LossLog = std::vector<EpochLog>;

namespace detail {
inline std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
inline std::string fmt_ms(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}
inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_real(*v) : std::string(); }
}  // namespace detail

// CSV with the wall-clock column last so logs of identical runs differ only there.
inline void write_loss_log(const LossLog& log, std::ostream& out) {
  out << "epoch,seq2seq,cls_ip,cls_gr_ip,cls_op,reconstruction,total,wall_ms\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << detail::fmt_real(e.loss.seq2seq) << ',' << detail::fmt_opt(e.loss.cls_ip) << ','
        << detail::fmt_opt(e.loss.cls_gr_ip) << ',' << detail::fmt_opt(e.loss.cls_op) << ','
        << detail::fmt_opt(e.loss.reconstruction) << ',' << detail::fmt_real(e.loss.total) << ','
        << detail::fmt_ms(e.wall_ms) << '\n';
  }
}

inline void write_loss_log(const LossLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write loss log " + path.string());
  write_loss_log(log, out);
}

// Texts longer than the backbone's window are cut so every example fits
// (source + EOS, BOS + target).
template <Seq2SeqBackbone M>
Example make_example(const M& model, std::string_view src, std::string_view tgt) {
  const std::size_t cap = model.max_length() - 1;
  Example ex{model.to_ids(src), model.to_ids(tgt)};
  if (ex.src.size() > cap) ex.src.resize(cap);
  if (ex.tgt.size() > cap) ex.tgt.resize(cap);
  return ex;
}

template <Seq2SeqBackbone M>
std::vector<Example> make_examples(const M& model, const std::vector<ParallelPair>& pairs) {
  std::vector<Example> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(make_example(model, p.toxic, p.civil));
  return out;
}

// cfg.epochs passes of shuffled mini-batches; the batch order comes from a
// generator seeded with cfg.seed and is independent of the model's own.
template <Seq2SeqBackbone M>
LossLog fit(M& model, std::span<const Example> data, const LossSpec& spec, const MethodConfig& cfg,
            std::size_t epochs) {
  cfg.validate();
  if (data.empty()) throw Error(ErrorCode::EmptySplit, "training data is empty");
  auto opt = model.make_optimizer(cfg.optimizer);
  Rng order(cfg.seed);
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  LossLog log;
  std::vector<Example> batch;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    order.shuffle(idx);
    EpochLog row;
    row.epoch = epoch;
    for (std::size_t b = 0; b < idx.size(); b += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(idx.size(), b + cfg.batch_size); ++i) batch.push_back(data[idx[i]]);
      try {
        row.loss += model.train_step(batch, spec, opt);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteLoss) throw;
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch " +
                                                  std::to_string(b / cfg.batch_size) + ": " + e.what());
      }
      row.items += batch.size();
    }
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    log.push_back(row);
    if (cfg.on_epoch) cfg.on_epoch(row);
  }
  return log;
}

template <Seq2SeqBackbone M>
struct TrainResult {
  M model;
  LossLog log;
};

// seq2seq and the three multitask variants over (toxic -> civil) pairs.
template <Seq2SeqBackbone M>
TrainResult<M> train_method(const CorpusSplit& split, const MethodConfig& cfg, M model) {
  if (cfg.method == Method::kt || cfg.method == Method::del_recon) {
    throw Error(ErrorCode::InvalidConfig,
                std::string(to_string(cfg.method)) + " needs extra resources; use train_kt or train_del_recon");
  }
  if (split.train.empty()) throw Error(ErrorCode::EmptySplit, "train split is empty");
  const auto data = make_examples(model, split.train);
  LossLog log = fit(model, data, loss_spec_for(cfg), cfg, cfg.epochs);
  return {std::move(model), std::move(log)};
}

template <Seq2SeqBackbone M>
struct KtResult {
  M stage1;
  M model;
  LossLog stage1_log;
  LossLog stage2_log;
};

// Called with each finished stage ("stage1", "stage2") so callers can
// persist checkpoints as soon as they exist.
template <class M>
using CheckpointFn = std::function<void(const M&, std::string_view stage)>;

template <Seq2SeqBackbone M>
KtResult<M> train_kt(const CorpusSplit& aux_split, const CorpusSplit& detox_split, const MethodConfig& cfg, M model,
                     const std::type_identity_t<CheckpointFn<M>>& checkpoint = {}) {
  if (aux_split.train.empty()) throw Error(ErrorCode::EmptySplit, "auxiliary train split is empty");
  if (detox_split.train.empty()) throw Error(ErrorCode::EmptySplit, "detox train split is empty");
  LossSpec spec;  // both stages train the plain sequence objective
  const auto aux = make_examples(model, aux_split.train);
  LossLog log1 = fit(model, aux, spec, cfg, cfg.stage1_epochs.value_or(cfg.epochs));
  if (checkpoint) checkpoint(model, "stage1");
  M stage1 = model;
  const auto detox = make_examples(model, detox_split.train);
  LossLog log2 = fit(model, detox, spec, cfg, cfg.epochs);
  if (checkpoint) checkpoint(model, "stage2");
  return {std::move(stage1), std::move(model), std::move(log1), std::move(log2)};
}

// Toxicity probability of a token list; attribution and delete-and-
// reconstruct only need this view of a classifier.
class ToxicityScorer {
 public:
  virtual ~ToxicityScorer() = default;
  virtual double p_toxic(const std::vector<std::string>& tokens) const = 0;
};

class FunctionScorer final : public ToxicityScorer {
 public:
  using Fn = std::function<double(const std::vector<std::string>&)>;
  explicit FunctionScorer(Fn fn) : fn_(std::move(fn)) {}
  double p_toxic(const std::vector<std::string>& tokens) const override { return fn_(tokens); }

 private:
  Fn fn_;
};

// high if any listed token is present, low otherwise.
class LexiconOracleScorer final : public ToxicityScorer {
 public:
  LexiconOracleScorer(std::vector<std::string> toxic, double high = 0.9, double low = 0.1)
      : toxic_(toxic.begin(), toxic.end()), high_(high), low_(low) {}
  double p_toxic(const std::vector<std::string>& tokens) const override {
    for (const auto& t : tokens) {
      if (toxic_.count(t)) return high_;
    }
    return low_;
  }

 private:
  std::set<std::string> toxic_;
  double high_, low_;
};

using AttributionVector = std::vector<double>;

// Leave-one-out occlusion: score_i = clip(p(full) - p(full without i), 0, 1).
// A single token is compared against the empty sequence.
inline AttributionVector compute_attributions(const ToxicityScorer& clf, const std::vector<std::string>& tokens) {
  if (tokens.empty()) throw Error(ErrorCode::EmptySequence, "cannot attribute an empty token sequence");
  const double full = clf.p_toxic(tokens);
  AttributionVector scores(tokens.size());
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    rest.clear();
    for (std::size_t j = 0; j < tokens.size(); ++j) {
      if (j != i) rest.push_back(tokens[j]);
    }
    scores[i] = std::clamp(full - clf.p_toxic(rest), 0.0, 1.0);
  }
  return scores;
}

// Keeps tokens whose score is <= tau, in order.
template <class T>
std::vector<T> delete_by_attribution(const std::vector<T>& tokens, const AttributionVector& attr, double tau) {
  if (tokens.size() != attr.size()) {
    throw Error(ErrorCode::ShapeMismatch, "attribution length " + std::to_string(attr.size()) + " != token count " +
                                              std::to_string(tokens.size()));
  }
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidConfig, "threshold must lie in [0, 1]");
  std::vector<T> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!(attr[i] > tau)) out.push_back(tokens[i]);
  }
  return out;
}

inline constexpr std::string_view kUnkText = "<unk>";

struct FilteredInput {
  std::vector<std::string> kept;
  std::vector<std::string> deleted;
  bool emptied = false;  // everything was deleted; kept holds a single UNK
};

inline FilteredInput filter_toxic_tokens(const ToxicityScorer& clf, std::string_view text, double tau) {
  FilteredInput out;
  const auto tokens = tokenize(text);
  if (tokens.empty()) {
    out.kept = {std::string(kUnkText)};
    out.emptied = true;
    return out;
  }
  const auto attr = compute_attributions(clf, tokens);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    (attr[i] > tau ? out.deleted : out.kept).push_back(tokens[i]);
  }
  if (out.kept.empty()) {
    out.kept = {std::string(kUnkText)};
    out.emptied = true;
  }
  return out;
}

struct DeletionRecord {
  ParallelPair pair;  // toxic holds the filtered input
  std::vector<std::string> deleted_tokens;
  bool emptied = false;
};

inline std::vector<DeletionRecord> build_deletion_corpus(const std::vector<ParallelPair>& pairs,
                                                         const ToxicityScorer& clf, double tau,
                                                         std::vector<std::string>* warnings = nullptr) {
  std::vector<DeletionRecord> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    FilteredInput f = filter_toxic_tokens(clf, p.toxic, tau);
    if (f.emptied && warnings) warnings->push_back(p.id + ": every token deleted, input replaced by " + std::string(kUnkText));
    out.push_back({{p.id, p.lang, join(f.kept), p.civil}, std::move(f.deleted), f.emptied});
  }
  return out;
}

inline void write_deletion_cache(const std::vector<DeletionRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write deletion cache " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json j = to_json(as_record(r.pair));
    j["deleted_tokens"] = r.deleted_tokens;
    out << j.dump() << '\n';
  }
}

template <Seq2SeqBackbone M>
struct DelReconResult {
  M model;
  LossLog log;
  std::vector<DeletionRecord> cache;
  std::vector<std::string> warnings;
};

// Trains the reconstruction objective on attribution-filtered inputs. The
// filtered corpus is written to cache_path when one is given.
template <Seq2SeqBackbone M>
DelReconResult<M> train_del_recon(const CorpusSplit& split, const ToxicityScorer& clf, const MethodConfig& cfg, M model,
                                  const std::filesystem::path& cache_path = {}) {
  if (split.train.empty()) throw Error(ErrorCode::EmptySplit, "train split is empty");
  cfg.validate();
  DelReconResult<M> result{std::move(model), {}, {}, {}};
  result.cache = build_deletion_corpus(split.train, clf, cfg.threshold, &result.warnings);
  if (!cache_path.empty()) write_deletion_cache(result.cache, cache_path);
  std::vector<Example> data;
  data.reserve(result.cache.size());
  for (const auto& r : result.cache) data.push_back(make_example(result.model, r.pair.toxic, r.pair.civil));
  MethodConfig c = cfg;
  c.method = Method::del_recon;
  result.log = fit(result.model, data, loss_spec_for(c), c, c.epochs);
  return result;
}

template <Seq2SeqBackbone M>
std::string detoxify(const M& model, std::string_view text) {
  TokenSequence ids = model.to_ids(text);
  if (ids.size() > model.max_length() - 1) ids.resize(model.max_length() - 1);
  return model.to_text(model.generate(ids, model.max_length()));
}

// del_recon inference: the same filtering as training, then generation.
template <Seq2SeqBackbone M>
std::string detoxify_filtered(const M& model, const ToxicityScorer& clf, double tau, std::string_view text) {
  return detoxify(model, join(filter_toxic_tokens(clf, text, tau).kept));
}

}  // namespace detox
