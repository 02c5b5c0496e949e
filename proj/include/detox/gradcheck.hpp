#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "detox/micro_model.hpp"

namespace detox {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_tensor;
};

// Relative errors are taken against max(|analytic|, |numeric|, floor) so
// that entries with vanishing gradients compare on an absolute scale.
inline constexpr double kGradCheckFloor = 1e-6;

namespace detail {
inline double primary_term(const LossBreakdown& l, const LossSpec& spec) {
  return spec.reconstruction ? l.reconstruction.value_or(0.0) : l.seq2seq;
}
inline double aux_term(const LossBreakdown& l) {
  return l.cls_ip.value_or(0.0) + l.cls_gr_ip.value_or(0.0) + l.cls_op.value_or(0.0);
}
}  // namespace detail

// Compares the analytic gradient with central differences on a sampled
// subset of weights (dropout off). Under gradient reversal the reference for
// an encoder-side weight is d(primary) - lambda * w * d(aux), i.e. the
// reversal is part of what is being verified.
inline GradCheckResult finite_diff_check(const MicroModel& model, std::span<const Example> batch, const LossSpec& spec,
                                         double eps = 1e-4, std::size_t per_tensor = 12, std::uint64_t seed = 7) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "finite difference step must be > 0");
  MicroModel probe = model;
  MicroWeights analytic;
  probe.gradient(batch, spec, analytic, false);

  GradCheckResult result;
  Rng rng(seed);
  for (std::size_t ti = 0; ti < MicroWeights::kCount; ++ti) {
    Eigen::MatrixXd& tensor = probe.weights()[ti];
    const auto size = static_cast<std::uint64_t>(tensor.size());
    if (size == 0) continue;
    const double aux_scale =
        spec.aux_weight * (spec.reverse_gradient && MicroWeights::encoder_side[ti] ? -spec.lambda : 1.0);
    for (std::size_t k = 0; k < std::min<std::uint64_t>(per_tensor, size); ++k) {
      const auto flat = static_cast<Eigen::Index>(rng.below(size));
      double& w = tensor.data()[flat];
      const double saved = w;
      w = saved + eps;
      const LossBreakdown plus = probe.compute_loss(batch, spec);
      w = saved - eps;
      const LossBreakdown minus = probe.compute_loss(batch, spec);
      w = saved;
      const double numeric =
          (detail::primary_term(plus, spec) - detail::primary_term(minus, spec)) / (2 * eps) +
          aux_scale * (detail::aux_term(plus) - detail::aux_term(minus)) / (2 * eps);
      const double a = analytic[ti].data()[flat];
      const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_tensor = std::string(MicroWeights::names[ti]);
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace detox
