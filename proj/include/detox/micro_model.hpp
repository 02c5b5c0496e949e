#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "detox/error.hpp"
#include "detox/losses.hpp"
#include "detox/random.hpp"
#include "detox/vocab.hpp"

namespace detox {

struct MicroConfig {
  std::size_t vocab_size = 6;
  std::size_t embed = 32;
  std::size_t hidden = 64;
  bool attention = true;
  std::size_t max_len = 64;
  double dropout = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size < 6) throw Error(ErrorCode::InvalidConfig, "vocabulary must hold at least 6 entries");
    if (embed < 1 || hidden < 1) throw Error(ErrorCode::InvalidConfig, "widths must be >= 1");
    if (max_len < 2) throw Error(ErrorCode::InvalidConfig, "max_len must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::InvalidConfig, "dropout must lie in [0, 1)");
  }

  bool operator==(const MicroConfig&) const = default;
};

// One training item. Both sides are unframed token ids; the model appends
// EOS to encoder inputs and wraps targets in BOS/EOS itself.
struct Example {
  TokenSequence src;
  TokenSequence tgt;
  ToxicityLabel src_label = ToxicityLabel::toxic;
  ToxicityLabel tgt_label = ToxicityLabel::non_toxic;
};

enum class AuxBranch { none, encoder, decoder };

// Which terms make up the objective of one training step.
struct LossSpec {
  bool sequence = true;        // teacher-forced cross-entropy on tgt
  bool reconstruction = false;  // book the sequence term as reconstruction
  AuxBranch aux = AuxBranch::none;
  bool reverse_gradient = false;  // gradient reversal in front of the encoder head
  double aux_weight = 1.0;
  double lambda = 1.0;
  bool classify_target = true;  // encoder head also sees tgt with tgt_label
};

// All trainable tensors. Biases and vectors are single-column matrices so the
// set can be walked uniformly.
struct MicroWeights {
  Eigen::MatrixXd embedding;  // K x E, shared by encoder and decoder
  Eigen::MatrixXd enc_pos;    // L x E
  Eigen::MatrixXd dec_pos;    // L x E
  Eigen::MatrixXd enc_wx, enc_wh, enc_b;
  Eigen::MatrixXd dec_wx, dec_wh, dec_b;
  Eigen::MatrixXd att_ws, att_wh, att_b, att_v;
  Eigen::MatrixXd out_ws, out_wc, out_b;
  Eigen::MatrixXd proj_w, proj_b;  // K x H, K x 1
  Eigen::MatrixXd head_w, head_b;  // 1 x H, 1 x 1

  static constexpr std::size_t kCount = 20;
  using Member = Eigen::MatrixXd MicroWeights::*;

  static constexpr std::array<Member, kCount> members = {
      &MicroWeights::embedding, &MicroWeights::enc_pos, &MicroWeights::dec_pos, &MicroWeights::enc_wx,
      &MicroWeights::enc_wh,    &MicroWeights::enc_b,   &MicroWeights::dec_wx,  &MicroWeights::dec_wh,
      &MicroWeights::dec_b,     &MicroWeights::att_ws,  &MicroWeights::att_wh,  &MicroWeights::att_b,
      &MicroWeights::att_v,     &MicroWeights::out_ws,  &MicroWeights::out_wc,  &MicroWeights::out_b,
      &MicroWeights::proj_w,    &MicroWeights::proj_b,  &MicroWeights::head_w,  &MicroWeights::head_b};

  static constexpr std::array<std::string_view, kCount> names = {
      "embedding", "enc_pos", "dec_pos", "enc_wx", "enc_wh", "enc_b",  "dec_wx", "dec_wh", "dec_b",  "att_ws",
      "att_wh",    "att_b",   "att_v",   "out_ws", "out_wc", "out_b",  "proj_w", "proj_b", "head_w", "head_b"};

  // Tensors that sit upstream of the pooled encoder representation, i.e.
  // those a reversed encoder-head gradient reaches.
  static constexpr std::array<bool, kCount> encoder_side = {true,  true,  false, true,  true,  true,  false,
                                                            false, false, false, false, false, false, false,
                                                            false, false, false, false, false, false};

  Eigen::MatrixXd& operator[](std::size_t i) { return this->*members[i]; }
  const Eigen::MatrixXd& operator[](std::size_t i) const { return this->*members[i]; }

  static MicroWeights zeros(const MicroConfig& c) {
    const auto K = static_cast<Eigen::Index>(c.vocab_size);
    const auto E = static_cast<Eigen::Index>(c.embed);
    const auto H = static_cast<Eigen::Index>(c.hidden);
    const auto L = static_cast<Eigen::Index>(c.max_len);
    MicroWeights w;
    w.embedding = Eigen::MatrixXd::Zero(K, E);
    w.enc_pos = Eigen::MatrixXd::Zero(L, E);
    w.dec_pos = Eigen::MatrixXd::Zero(L, E);
    w.enc_wx = Eigen::MatrixXd::Zero(H, E);
    w.enc_wh = Eigen::MatrixXd::Zero(H, H);
    w.enc_b = Eigen::MatrixXd::Zero(H, 1);
    w.dec_wx = Eigen::MatrixXd::Zero(H, E);
    w.dec_wh = Eigen::MatrixXd::Zero(H, H);
    w.dec_b = Eigen::MatrixXd::Zero(H, 1);
    w.att_ws = Eigen::MatrixXd::Zero(H, H);
    w.att_wh = Eigen::MatrixXd::Zero(H, H);
    w.att_b = Eigen::MatrixXd::Zero(H, 1);
    w.att_v = Eigen::MatrixXd::Zero(H, 1);
    w.out_ws = Eigen::MatrixXd::Zero(H, H);
    w.out_wc = Eigen::MatrixXd::Zero(H, H);
    w.out_b = Eigen::MatrixXd::Zero(H, 1);
    w.proj_w = Eigen::MatrixXd::Zero(K, H);
    w.proj_b = Eigen::MatrixXd::Zero(K, 1);
    w.head_w = Eigen::MatrixXd::Zero(1, H);
    w.head_b = Eigen::MatrixXd::Zero(1, 1);
    return w;
  }

  void set_zero() {
    for (std::size_t i = 0; i < kCount; ++i) (*this)[i].setZero();
  }

  bool all_finite() const {
    for (std::size_t i = 0; i < kCount; ++i)
      if (!(*this)[i].allFinite()) return false;
    return true;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < kCount; ++i) n += static_cast<std::size_t>((*this)[i].size());
    return n;
  }

  // Exact elementwise equality.
  bool operator==(const MicroWeights& o) const {
    for (std::size_t i = 0; i < kCount; ++i) {
      const auto& a = (*this)[i];
      const auto& b = o[i];
      if (a.rows() != b.rows() || a.cols() != b.cols() || !(a.array() == b.array()).all()) return false;
    }
    return true;
  }
};

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-5;
  double l2 = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Weight decay is decoupled: w <- (1 - lr*l2) w - lr * step. For plain
// descent this equals descending on loss + (l2/2)|w|^2.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void apply(MicroWeights& w, const MicroWeights& g) {
    const double decay = 1.0 - cfg_.lr * cfg_.l2;
    if (cfg_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < MicroWeights::kCount; ++i) w[i] = decay * w[i] - cfg_.lr * g[i];
      return;
    }
    if (!initialized_) {
      m_ = g;
      v_ = g;
      m_.set_zero();
      v_.set_zero();
      initialized_ = true;
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < MicroWeights::kCount; ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i].cwiseProduct(g[i]);
      const Eigen::ArrayXXd step = (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.epsilon);
      w[i] = decay * w[i] - (cfg_.lr * step).matrix();
    }
  }

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  bool initialized_ = false;
  std::uint64_t steps_ = 0;
  MicroWeights m_, v_;
};

// Single-layer tanh RNN encoder and decoder with one additive attention step
// per decoder position, learned positional embeddings and a sigmoid head
// that can read either side's mean-pooled states.
class MicroModel {
 public:
  MicroModel(MicroConfig cfg, Vocab vocab) : cfg_(cfg), vocab_(std::move(vocab)), rng_(cfg.seed) {
    cfg_.vocab_size = vocab_.size();
    cfg_.validate();
    w_ = MicroWeights::zeros(cfg_);
    init_random();
  }

  static MicroModel zeros(MicroConfig cfg, Vocab vocab) {
    MicroModel m(cfg, std::move(vocab));
    m.w_.set_zero();
    return m;
  }

  // Restores a model from its parts (used by deserialization).
  MicroModel(MicroConfig cfg, Vocab vocab, MicroWeights weights, const std::string& rng_state)
      : cfg_(cfg), vocab_(std::move(vocab)), w_(std::move(weights)), rng_(cfg.seed) {
    cfg_.validate();
    if (cfg_.vocab_size != vocab_.size()) throw Error(ErrorCode::CorruptModelFile, "config vocab size disagrees with vocab");
    const MicroWeights shape = MicroWeights::zeros(cfg_);
    for (std::size_t i = 0; i < MicroWeights::kCount; ++i) {
      if (w_[i].rows() != shape[i].rows() || w_[i].cols() != shape[i].cols()) {
        throw Error(ErrorCode::CorruptModelFile, "tensor " + std::string(MicroWeights::names[i]) + " has wrong shape");
      }
    }
    if (!rng_state.empty()) rng_.set_state(rng_state);
  }

  const MicroConfig& config() const { return cfg_; }
  const Vocab& vocab() const { return vocab_; }
  const MicroWeights& weights() const { return w_; }
  MicroWeights& weights() { return w_; }
  const Rng& rng() const { return rng_; }
  std::size_t max_length() const { return cfg_.max_len; }

  TokenSequence to_ids(std::string_view text) const { return vocab_.encode_text(text); }
  std::string to_text(const TokenSequence& ids) const { return vocab_.decode_text(ids); }

  // Encoder states for src + EOS, one row per position.
  HiddenStates encode(const TokenSequence& src) const {
    return run_encoder(src, nullptr).h;
  }

  // Logits for every decoder input position; tgt_prefix is fed verbatim and
  // normally starts with BOS.
  Logits forward(const TokenSequence& src, const TokenSequence& tgt_prefix) const {
    check_target_length(tgt_prefix.size());
    const EncoderTrace enc = run_encoder(src, nullptr);
    return run_decoder(enc, tgt_prefix, nullptr).logits;
  }

  // Greedy decoding from BOS until EOS or max_len tokens; ties go to the
  // lowest token id. The returned ids exclude EOS.
  TokenSequence generate(const TokenSequence& src, std::size_t max_len) const {
    if (max_len < 1) throw Error(ErrorCode::InvalidConfig, "max_len must be >= 1");
    check_target_length(max_len);
    const EncoderTrace enc = run_encoder(src, nullptr);
    const Eigen::MatrixXd keys = attention_keys(enc.h);
    Eigen::VectorXd s = enc.h.row(enc.h.rows() - 1).transpose();
    TokenSequence out;
    TokenId prev = kBos;
    for (std::size_t t = 0; t < max_len; ++t) {
      Step step = decoder_step(enc.h, keys, s, prev, t, nullptr);
      TokenId best = 0;
      for (Eigen::Index k = 1; k < step.logits.size(); ++k) {
        if (step.logits(k) > step.logits(best)) best = static_cast<TokenId>(k);
      }
      if (best == kEos) break;
      out.push_back(best);
      prev = best;
      s = step.s;
    }
    return out;
  }

  // Head probability of label 1 (non-toxic) on mean-pooled encoder states.
  double classify(const TokenSequence& src) const {
    const EncoderTrace enc = run_encoder(src, nullptr);
    return head_probability(enc.h.colwise().mean().transpose());
  }

  // Summed loss over the batch with dropout disabled; no state changes.
  LossBreakdown compute_loss(std::span<const Example> batch, const LossSpec& spec) const {
    LossBreakdown total;
    for (const auto& ex : batch) total += process(ex, spec, nullptr, nullptr);
    return total;
  }

  // Loss and gradient of the batch objective. With dropout enabled the
  // model's generator is advanced in a fixed order.
  LossBreakdown gradient(std::span<const Example> batch, const LossSpec& spec, MicroWeights& grads, bool dropout) {
    grads = MicroWeights::zeros(cfg_);
    LossBreakdown total;
    Rng* rng = dropout && cfg_.dropout > 0.0 ? &rng_ : nullptr;
    for (const auto& ex : batch) total += process(ex, spec, &grads, rng);
    return total;
  }

  // One optimizer update; returns the pre-update loss.
  LossBreakdown train_step(std::span<const Example> batch, const LossSpec& spec, Optimizer& opt) {
    if (batch.empty()) throw Error(ErrorCode::EmptyInput, "train_step needs a non-empty batch");
    MicroWeights grads;
    LossBreakdown loss = gradient(batch, spec, grads, true);
    if (!loss.finite() || !grads.all_finite()) {
      throw Error(ErrorCode::NonFiniteLoss, "non-finite loss or gradient (total=" + std::to_string(loss.total) + ")");
    }
    opt.apply(w_, grads);
    return loss;
  }

  // Plain gradient-descent step with decoupled L2 decay.
  LossBreakdown train_step(std::span<const Example> batch, const LossSpec& spec, double lr, double l2) {
    Optimizer opt({OptimizerKind::sgd, lr, l2});
    return train_step(batch, spec, opt);
  }

  Optimizer make_optimizer(const OptimizerConfig& cfg) const { return Optimizer(cfg); }

  bool operator==(const MicroModel& o) const {
    return cfg_ == o.cfg_ && vocab_ == o.vocab_ && w_ == o.w_;
  }

 private:
  struct EncoderTrace {
    TokenSequence ids;                  // framed
    std::vector<Eigen::VectorXd> x;     // inputs after dropout
    std::vector<Eigen::VectorXd> mask;  // empty when dropout is off
    Eigen::MatrixXd h;                  // n x H
  };

  struct Step {
    Eigen::VectorXd x, x_mask;
    Eigen::VectorXd s;      // new decoder state
    Eigen::MatrixXd act;    // tanh(q + k_j), n x H
    Eigen::VectorXd alpha;  // attention weights
    Eigen::VectorXd c;      // context
    Eigen::VectorXd o, o_mask;
    Eigen::VectorXd logits;
  };

  struct DecoderTrace {
    TokenSequence inputs;
    Eigen::VectorXd s0;
    std::vector<Step> steps;
    Eigen::MatrixXd keys;
    Logits logits;  // T x K
  };

  void init_random() {
    auto fill = [&](Eigen::MatrixXd& m, double scale) {
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng_.uniform(-scale, scale);
    };
    auto glorot = [&](Eigen::MatrixXd& m) { fill(m, std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()))); };
    fill(w_.embedding, 0.1);
    fill(w_.enc_pos, 0.1);
    fill(w_.dec_pos, 0.1);
    glorot(w_.enc_wx);
    glorot(w_.enc_wh);
    glorot(w_.dec_wx);
    glorot(w_.dec_wh);
    glorot(w_.att_ws);
    glorot(w_.att_wh);
    glorot(w_.att_v);
    glorot(w_.out_ws);
    glorot(w_.out_wc);
    glorot(w_.proj_w);
    glorot(w_.head_w);
  }

  void check_target_length(std::size_t n) const {
    if (n > cfg_.max_len) {
      throw Error(ErrorCode::SequenceTooLong,
                  "decoder length " + std::to_string(n) + " exceeds max_len " + std::to_string(cfg_.max_len));
    }
  }

  Eigen::VectorXd dropout_mask(Eigen::Index n, Rng* rng) const {
    Eigen::VectorXd m(n);
    const double keep = 1.0 / (1.0 - cfg_.dropout);
    for (Eigen::Index i = 0; i < n; ++i) m(i) = rng->uniform01() < cfg_.dropout ? 0.0 : keep;
    return m;
  }

  void check_ids(const TokenSequence& ids) const {
    for (TokenId id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
        throw Error(ErrorCode::ShapeMismatch, "token id " + std::to_string(id) + " outside vocab");
      }
    }
  }

  EncoderTrace run_encoder(const TokenSequence& src, Rng* rng) const {
    EncoderTrace tr;
    tr.ids = frame_source(src);
    check_ids(tr.ids);
    if (tr.ids.size() > cfg_.max_len) {
      throw Error(ErrorCode::SequenceTooLong, "source length " + std::to_string(tr.ids.size()) +
                                                  " (with EOS) exceeds max_len " + std::to_string(cfg_.max_len));
    }
    const auto n = static_cast<Eigen::Index>(tr.ids.size());
    const auto H = static_cast<Eigen::Index>(cfg_.hidden);
    tr.h.resize(n, H);
    Eigen::VectorXd prev = Eigen::VectorXd::Zero(H);
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::VectorXd x = (w_.embedding.row(tr.ids[static_cast<std::size_t>(j)]) + w_.enc_pos.row(j)).transpose();
      if (rng) {
        tr.mask.push_back(dropout_mask(x.size(), rng));
        x = x.cwiseProduct(tr.mask.back());
      }
      Eigen::VectorXd h = (w_.enc_wx * x + w_.enc_wh * prev + w_.enc_b).array().tanh();
      tr.h.row(j) = h.transpose();
      tr.x.push_back(std::move(x));
      prev = std::move(h);
    }
    return tr;
  }

  Eigen::MatrixXd attention_keys(const Eigen::MatrixXd& h) const {
    if (!cfg_.attention) return {};
    Eigen::MatrixXd keys = h * w_.att_wh.transpose();
    keys.rowwise() += w_.att_b.col(0).transpose();
    return keys;
  }

  Step decoder_step(const Eigen::MatrixXd& h, const Eigen::MatrixXd& keys, const Eigen::VectorXd& s_prev,
                    TokenId input, std::size_t position, Rng* rng) const {
    Step st;
    const auto pos = static_cast<Eigen::Index>(position);
    st.x = (w_.embedding.row(input) + w_.dec_pos.row(pos)).transpose();
    if (rng) {
      st.x_mask = dropout_mask(st.x.size(), rng);
      st.x = st.x.cwiseProduct(st.x_mask);
    }
    st.s = (w_.dec_wx * st.x + w_.dec_wh * s_prev + w_.dec_b).array().tanh();
    if (cfg_.attention) {
      const Eigen::VectorXd q = w_.att_ws * st.s;
      st.act = keys;
      st.act.rowwise() += q.transpose();
      st.act = st.act.array().tanh();
      const Eigen::VectorXd e = st.act * w_.att_v.col(0);
      const double m = e.maxCoeff();
      st.alpha = (e.array() - m).exp();
      st.alpha /= st.alpha.sum();
      st.c = h.transpose() * st.alpha;
    } else {
      st.c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg_.hidden));
    }
    st.o = (w_.out_ws * st.s + w_.out_wc * st.c + w_.out_b).array().tanh();
    Eigen::VectorXd od = st.o;
    if (rng) {
      st.o_mask = dropout_mask(st.o.size(), rng);
      od = od.cwiseProduct(st.o_mask);
    }
    st.logits = w_.proj_w * od + w_.proj_b.col(0);
    return st;
  }

  DecoderTrace run_decoder(const EncoderTrace& enc, const TokenSequence& inputs, Rng* rng) const {
    check_ids(inputs);
    check_target_length(inputs.size());
    DecoderTrace tr;
    tr.inputs = inputs;
    tr.keys = attention_keys(enc.h);
    tr.s0 = enc.h.row(enc.h.rows() - 1).transpose();
    tr.logits.resize(static_cast<Eigen::Index>(inputs.size()), static_cast<Eigen::Index>(cfg_.vocab_size));
    const Eigen::VectorXd* s = &tr.s0;
    tr.steps.reserve(inputs.size());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      tr.steps.push_back(decoder_step(enc.h, tr.keys, *s, inputs[t], t, rng));
      tr.logits.row(static_cast<Eigen::Index>(t)) = tr.steps.back().logits.transpose();
      s = &tr.steps.back().s;
    }
    return tr;
  }

  double head_probability(const Eigen::VectorXd& pooled) const {
    return sigmoid((w_.head_w * pooled)(0, 0) + w_.head_b(0, 0));
  }

  // Head forward + backward on a pooled representation. Returns the loss;
  // writes d(weighted loss)/d(pooled) into dpooled when grads is set.
  double head_term(const Eigen::VectorXd& pooled, ToxicityLabel label, double weight, MicroWeights* g,
                   Eigen::VectorXd* dpooled) const {
    const double p = head_probability(pooled);
    const double probs[] = {p};
    const ToxicityLabel labels[] = {label};
    const double loss = binary_cls_loss(probs, labels);
    if (g) {
      const double dz = weight * binary_cls_logit_grad(p, label);
      g->head_w += dz * pooled.transpose();
      g->head_b(0, 0) += dz;
      *dpooled = dz * w_.head_w.transpose();
    }
    return loss;
  }

  void backward_encoder(const EncoderTrace& enc, Eigen::MatrixXd& dh, MicroWeights& g) const {
    const auto n = enc.h.rows();
    const auto H = enc.h.cols();
    for (Eigen::Index j = n - 1; j >= 0; --j) {
      const Eigen::VectorXd h = enc.h.row(j).transpose();
      const Eigen::VectorXd dpre = dh.row(j).transpose().cwiseProduct((1.0 - h.array().square()).matrix());
      const Eigen::VectorXd prev = j > 0 ? Eigen::VectorXd(enc.h.row(j - 1).transpose()) : Eigen::VectorXd::Zero(H);
      g.enc_wx += dpre * enc.x[static_cast<std::size_t>(j)].transpose();
      g.enc_wh += dpre * prev.transpose();
      g.enc_b += dpre;
      Eigen::VectorXd dx = w_.enc_wx.transpose() * dpre;
      if (!enc.mask.empty()) dx = dx.cwiseProduct(enc.mask[static_cast<std::size_t>(j)]);
      g.embedding.row(enc.ids[static_cast<std::size_t>(j)]) += dx.transpose();
      g.enc_pos.row(j) += dx.transpose();
      if (j > 0) dh.row(j - 1) += (w_.enc_wh.transpose() * dpre).transpose();
    }
  }

  // ds_extra[t] is an additional gradient on the state after step t.
  void backward_decoder(const EncoderTrace& enc, const DecoderTrace& dec, const Eigen::MatrixXd& dlogits,
                        const std::vector<Eigen::VectorXd>& ds_extra, Eigen::MatrixXd& dh, MicroWeights& g) const {
    const auto H = static_cast<Eigen::Index>(cfg_.hidden);
    Eigen::MatrixXd dkeys;
    if (cfg_.attention) dkeys = Eigen::MatrixXd::Zero(enc.h.rows(), H);
    Eigen::VectorXd ds_next = Eigen::VectorXd::Zero(H);
    for (std::size_t t = dec.steps.size(); t-- > 0;) {
      const Step& st = dec.steps[t];
      const Eigen::VectorXd& s_prev = t > 0 ? dec.steps[t - 1].s : dec.s0;
      const Eigen::VectorXd dz = dlogits.row(static_cast<Eigen::Index>(t)).transpose();
      const Eigen::VectorXd od = st.o_mask.size() ? Eigen::VectorXd(st.o.cwiseProduct(st.o_mask)) : st.o;
      g.proj_w += dz * od.transpose();
      g.proj_b += dz;
      Eigen::VectorXd d_o = w_.proj_w.transpose() * dz;
      if (st.o_mask.size()) d_o = d_o.cwiseProduct(st.o_mask);
      const Eigen::VectorXd dpo = d_o.cwiseProduct((1.0 - st.o.array().square()).matrix());
      g.out_ws += dpo * st.s.transpose();
      g.out_wc += dpo * st.c.transpose();
      g.out_b += dpo;
      Eigen::VectorXd ds = ds_next + ds_extra[t] + w_.out_ws.transpose() * dpo;
      if (cfg_.attention) {
        const Eigen::VectorXd dc = w_.out_wc.transpose() * dpo;
        const Eigen::VectorXd dalpha = enc.h * dc;
        const double mean = st.alpha.dot(dalpha);
        const Eigen::VectorXd de = st.alpha.cwiseProduct((dalpha.array() - mean).matrix());
        g.att_v += st.act.transpose() * de;
        const Eigen::MatrixXd dact =
            (de * w_.att_v.col(0).transpose()).cwiseProduct((1.0 - st.act.array().square()).matrix());
        const Eigen::VectorXd dq = dact.colwise().sum().transpose();
        dkeys += dact;
        g.att_ws += dq * st.s.transpose();
        ds += w_.att_ws.transpose() * dq;
        dh += st.alpha * dc.transpose();
      }
      const Eigen::VectorXd dpre = ds.cwiseProduct((1.0 - st.s.array().square()).matrix());
      g.dec_wx += dpre * st.x.transpose();
      g.dec_wh += dpre * s_prev.transpose();
      g.dec_b += dpre;
      Eigen::VectorXd dx = w_.dec_wx.transpose() * dpre;
      if (st.x_mask.size()) dx = dx.cwiseProduct(st.x_mask);
      g.embedding.row(dec.inputs[t]) += dx.transpose();
      g.dec_pos.row(static_cast<Eigen::Index>(t)) += dx.transpose();
      ds_next = w_.dec_wh.transpose() * dpre;
    }
    dh.row(enc.h.rows() - 1) += ds_next.transpose();
    if (cfg_.attention) {
      g.att_wh += dkeys.transpose() * enc.h;
      g.att_b += dkeys.colwise().sum().transpose();
      dh += dkeys * w_.att_wh;
    }
  }

  // Forward (and, with g set, backward) of one example under spec.
  LossBreakdown process(const Example& ex, const LossSpec& spec, MicroWeights* g, Rng* rng) const {
    LossBreakdown out;
    const EncoderTrace enc = run_encoder(ex.src, rng);
    Eigen::MatrixXd dh;
    if (g) dh = Eigen::MatrixXd::Zero(enc.h.rows(), enc.h.cols());

    const bool need_decoder = spec.sequence || spec.aux == AuxBranch::decoder;
    DecoderTrace dec;
    Eigen::MatrixXd dlogits;
    std::vector<Eigen::VectorXd> ds_extra;
    double primary = 0.0;
    if (need_decoder) {
      TokenSequence inputs{kBos};
      inputs.insert(inputs.end(), ex.tgt.begin(), ex.tgt.end());
      TokenSequence targets = ex.tgt;
      targets.push_back(kEos);
      dec = run_decoder(enc, inputs, rng);
      if (g) {
        ds_extra.assign(inputs.size(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cfg_.hidden)));
        dlogits = Eigen::MatrixXd::Zero(dec.logits.rows(), dec.logits.cols());
      }
      if (spec.sequence) {
        primary = seq2seq_loss(dec.logits, targets);
        if (g) dlogits = seq2seq_loss_grad(dec.logits, targets);
        if (spec.reconstruction) {
          out.reconstruction = primary;
        } else {
          out.seq2seq = primary;
        }
      }
    }

    double aux = 0.0;
    if (spec.aux == AuxBranch::encoder) {
      const GradientReversal grl(spec.reverse_gradient ? spec.lambda : 0.0);
      auto classify_side = [&](const EncoderTrace& side, ToxicityLabel label, Eigen::MatrixXd* dside) {
        const Eigen::VectorXd pooled = grl.forward(Eigen::VectorXd(side.h.colwise().mean().transpose()));
        Eigen::VectorXd dpooled;
        aux += head_term(pooled, label, spec.aux_weight, g, &dpooled);
        if (!g) return;
        if (spec.reverse_gradient) dpooled = grl.backward(dpooled);
        dside->rowwise() += (dpooled / static_cast<double>(side.h.rows())).transpose();
      };
      classify_side(enc, ex.src_label, g ? &dh : nullptr);
      if (spec.classify_target) {
        // No dropout on this extra pass, so the generator advances exactly
        // as it does for the sequence objective alone.
        const EncoderTrace tgt_enc = run_encoder(ex.tgt, nullptr);
        Eigen::MatrixXd dh_tgt;
        if (g) dh_tgt = Eigen::MatrixXd::Zero(tgt_enc.h.rows(), tgt_enc.h.cols());
        classify_side(tgt_enc, ex.tgt_label, g ? &dh_tgt : nullptr);
        if (g) backward_encoder(tgt_enc, dh_tgt, *g);
      }
      if (spec.reverse_gradient) {
        out.cls_gr_ip = aux;
      } else {
        out.cls_ip = aux;
      }
    } else if (spec.aux == AuxBranch::decoder) {
      Eigen::MatrixXd states(static_cast<Eigen::Index>(dec.steps.size()), static_cast<Eigen::Index>(cfg_.hidden));
      for (std::size_t t = 0; t < dec.steps.size(); ++t) states.row(static_cast<Eigen::Index>(t)) = dec.steps[t].s;
      const Eigen::VectorXd pooled = states.colwise().mean().transpose();
      Eigen::VectorXd dpooled;
      aux = head_term(pooled, ex.tgt_label, spec.aux_weight, g, &dpooled);
      if (g) {
        for (auto& d : ds_extra) d = dpooled / static_cast<double>(dec.steps.size());
      }
      out.cls_op = aux;
    }
    out.total = primary + spec.aux_weight * aux;

    if (g) {
      if (need_decoder) backward_decoder(enc, dec, dlogits, ds_extra, dh, *g);
      backward_encoder(enc, dh, *g);
    }
    return out;
  }

  MicroConfig cfg_;
  Vocab vocab_;
  MicroWeights w_;
  Rng rng_;
};

}  // namespace detox
