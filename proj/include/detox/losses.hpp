#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "detox/error.hpp"
#include "detox/vocab.hpp"

namespace detox {

// Rows are target positions, columns vocabulary entries.
using Logits = Eigen::MatrixXd;
// Rows are source positions, columns hidden units.
using HiddenStates = Eigen::MatrixXd;

enum class ToxicityLabel : int { toxic = 0, non_toxic = 1 };

inline double label_value(ToxicityLabel l) { return l == ToxicityLabel::non_toxic ? 1.0 : 0.0; }

enum class Method { seq2seq, kt, mt_cls_ip, mt_cls_gr_ip, mt_cls_op, del_recon };

inline constexpr std::array<Method, 6> kAllMethods = {Method::seq2seq,      Method::kt,        Method::mt_cls_ip,
                                                      Method::mt_cls_gr_ip, Method::mt_cls_op, Method::del_recon};

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::seq2seq: return "seq2seq";
    case Method::kt: return "kt";
    case Method::mt_cls_ip: return "mt_cls_ip";
    case Method::mt_cls_gr_ip: return "mt_cls_gr_ip";
    case Method::mt_cls_op: return "mt_cls_op";
    case Method::del_recon: return "del_recon";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

struct LossBreakdown {
  double seq2seq = 0.0;
  std::optional<double> cls_ip;
  std::optional<double> cls_gr_ip;
  std::optional<double> cls_op;
  std::optional<double> reconstruction;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o) {
    auto add = [](std::optional<double>& a, const std::optional<double>& b) {
      if (b) a = a.value_or(0.0) + *b;
    };
    seq2seq += o.seq2seq;
    add(cls_ip, o.cls_ip);
    add(cls_gr_ip, o.cls_gr_ip);
    add(cls_op, o.cls_op);
    add(reconstruction, o.reconstruction);
    total += o.total;
    return *this;
  }

  bool finite() const {
    auto ok = [](const std::optional<double>& v) { return !v || std::isfinite(*v); };
    return std::isfinite(seq2seq) && std::isfinite(total) && ok(cls_ip) && ok(cls_gr_ip) && ok(cls_op) &&
           ok(reconstruction);
  }
};

// Numerically stable log-softmax of one row.
inline Eigen::RowVectorXd log_softmax(const Eigen::RowVectorXd& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

inline Eigen::MatrixXd softmax_rows(const Logits& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) p.row(t) = log_softmax(logits.row(t)).array().exp();
  return p;
}

// Token-level cross-entropy summed over non-PAD target positions.
inline double seq2seq_loss(const Logits& logits, const TokenSequence& target) {
  if (static_cast<std::size_t>(logits.rows()) != target.size()) {
    throw Error(ErrorCode::ShapeMismatch, "logits have " + std::to_string(logits.rows()) + " rows, target has " +
                                              std::to_string(target.size()) + " tokens");
  }
  double loss = 0.0;
  for (std::size_t t = 0; t < target.size(); ++t) {
    if (target[t] == kPad) continue;
    if (target[t] < 0 || target[t] >= logits.cols()) throw Error(ErrorCode::ShapeMismatch, "target id outside vocab");
    const auto row = static_cast<Eigen::Index>(t);
    loss -= log_softmax(logits.row(row))(target[t]);
  }
  return loss;
}

// Gradient of seq2seq_loss with respect to the logits.
inline Eigen::MatrixXd seq2seq_loss_grad(const Logits& logits, const TokenSequence& target) {
  Eigen::MatrixXd g = softmax_rows(logits);
  for (std::size_t t = 0; t < target.size(); ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    if (target[t] == kPad) {
      g.row(row).setZero();
    } else {
      g(row, target[t]) -= 1.0;
    }
  }
  return g;
}

// The deletion-filtered input is reconstructed into the civil sentence with
// the same token-level cross-entropy as the sequence loss.
inline double reconstruction_loss(const Logits& logits, const TokenSequence& civil_target) {
  return seq2seq_loss(logits, civil_target);
}

inline constexpr double kProbEpsilon = 1e-7;

inline double clamp_prob(double p) { return std::min(std::max(p, kProbEpsilon), 1.0 - kProbEpsilon); }

// probs[i] is the predicted probability of label 1 (non-toxic). Summed
// over the batch.
inline double binary_cls_loss(std::span<const double> probs, std::span<const ToxicityLabel> labels) {
  if (probs.size() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(probs.size()) + " probabilities for " +
                                              std::to_string(labels.size()) + " labels");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = clamp_prob(probs[i]);
    const double t = label_value(labels[i]);
    loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return loss;
}

// d(binary_cls_loss)/d(logit) for a sigmoid head; zero inside the clamp.
inline double binary_cls_logit_grad(double p, ToxicityLabel label) {
  if (p < kProbEpsilon || p > 1.0 - kProbEpsilon) return 0.0;
  return p - label_value(label);
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Identity on the forward pass; the backward pass hands -lambda * g upstream.
class GradientReversal {
 public:
  explicit GradientReversal(double lambda) : lambda_(lambda) {
    if (!(lambda >= 0.0)) throw Error(ErrorCode::InvalidConfig, "gradient reversal lambda must be >= 0");
  }

  template <class T>
  const T& forward(const T& x) const {
    return x;
  }

  template <class T>
  T backward(const T& grad) const {
    return -lambda_ * grad;
  }

  double lambda() const { return lambda_; }

 private:
  double lambda_;
};

// total = primary + w * auxiliary, where the primary term is the
// reconstruction loss for del_recon and the sequence loss otherwise.
inline double combined_loss(const LossBreakdown& parts, Method variant, double w) {
  auto need = [&](const std::optional<double>& v, std::string_view name) {
    if (!v) throw Error(ErrorCode::MissingComponent, std::string(name) + " missing for " + std::string(to_string(variant)));
    return *v;
  };
  switch (variant) {
    case Method::seq2seq:
    case Method::kt: return parts.seq2seq;
    case Method::mt_cls_ip: return parts.seq2seq + w * need(parts.cls_ip, "cls_ip");
    case Method::mt_cls_gr_ip: return parts.seq2seq + w * need(parts.cls_gr_ip, "cls_gr_ip");
    case Method::mt_cls_op: return parts.seq2seq + w * need(parts.cls_op, "cls_op");
    case Method::del_recon: return need(parts.reconstruction, "reconstruction");
  }
  return parts.seq2seq;
}

}  // namespace detox
