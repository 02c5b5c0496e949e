#pragma once

#include <concepts>
#include <cstdlib>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "detox/micro_model.hpp"

namespace detox {

// What the training procedures need from an encoder-decoder. MicroModel is
// the built-in implementation; an external pretrained model becomes a
// drop-in backbone by satisfying the same surface.
template <class M>
concept Seq2SeqBackbone = std::copy_constructible<M> &&
    requires(M m, const M cm, const TokenSequence& ids, std::string_view text, std::span<const Example> batch,
             const LossSpec& spec, const OptimizerConfig& oc) {
  { cm.to_ids(text) } -> std::same_as<TokenSequence>;
  { cm.to_text(ids) } -> std::same_as<std::string>;
  { cm.encode(ids) } -> std::convertible_to<HiddenStates>;
  { cm.forward(ids, ids) } -> std::convertible_to<Logits>;
  { cm.generate(ids, std::size_t{1}) } -> std::same_as<TokenSequence>;
  { cm.classify(ids) } -> std::convertible_to<double>;
  { cm.max_length() } -> std::convertible_to<std::size_t>;
  cm.make_optimizer(oc);
  requires requires(decltype(cm.make_optimizer(oc)) opt) {
    { m.train_step(batch, spec, opt) } -> std::same_as<LossBreakdown>;
  };
};

inline constexpr const char* kAdapterDirEnv = "DETOX_ADAPTER_DIR";

inline std::filesystem::path adapter_root() {
  const char* dir = std::getenv(kAdapterDirEnv);
  return dir ? std::filesystem::path(dir) : std::filesystem::path();
}

// Slot for an external pretrained multilingual encoder-decoder. No weights
// ship with the toolkit; every call reports the adapter as unavailable. A
// real binding replaces the bodies and keeps the signatures.
class PretrainedAdapter {
 public:
  struct Optimizer {
    OptimizerConfig config;
  };

  explicit PretrainedAdapter(std::string id, std::filesystem::path root = adapter_root())
      : id_(std::move(id)), root_(std::move(root)) {}

  const std::string& id() const { return id_; }

  TokenSequence to_ids(std::string_view) const { unavailable(); }
  std::string to_text(const TokenSequence&) const { unavailable(); }
  HiddenStates encode(const TokenSequence&) const { unavailable(); }
  Logits forward(const TokenSequence&, const TokenSequence&) const { unavailable(); }
  TokenSequence generate(const TokenSequence&, std::size_t) const { unavailable(); }
  double classify(const TokenSequence&) const { unavailable(); }
  std::size_t max_length() const { return 1024; }
  Optimizer make_optimizer(const OptimizerConfig& c) const { return {c}; }
  LossBreakdown train_step(std::span<const Example>, const LossSpec&, Optimizer&) { unavailable(); }

 private:
  [[noreturn]] void unavailable() const {
    const std::string where = root_.empty() ? std::string("(") + kAdapterDirEnv + " unset)" : (root_ / id_).string();
    throw Error(ErrorCode::AdapterUnavailable, "pretrained adapter '" + id_ + "' is not available at " + where);
  }

  std::string id_;
  std::filesystem::path root_;
};

static_assert(Seq2SeqBackbone<PretrainedAdapter>);

}  // namespace detox
