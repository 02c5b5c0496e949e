#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "detox/error.hpp"
#include "detox/random.hpp"
#include "detox/text.hpp"

namespace detox {

namespace detail {
inline void check_lengths(std::size_t a, std::size_t b, std::string_view what) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch,
                std::string(what) + ": " + std::to_string(a) + " candidates vs " + std::to_string(b) + " references");
  }
}

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

inline NgramCounts ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}
}  // namespace detail

inline constexpr double kBleuEpsilon = 1e-9;
inline constexpr std::size_t kBleuMaxOrder = 4;

// Corpus BLEU on tokenized text: clipped n-gram precisions for n = 1..4,
// uniform weights, brevity penalty exp(1 - r/c) when c < r. A zero
// precision becomes kBleuEpsilon. An order with no n-grams on either side
// counts as precision 1, so short identical corpora still score 100.
inline double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
  detail::check_lengths(candidates.size(), references.size(), "bleu");
  if (candidates.empty()) throw Error(ErrorCode::EmptyInput, "bleu needs at least one pair");
  std::array<std::size_t, kBleuMaxOrder> matched{}, cand_total{}, ref_total{};
  std::size_t c = 0, r = 0;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const auto cand = tokenize(candidates[k]);
    const auto ref = tokenize(references[k]);
    c += cand.size();
    r += ref.size();
    for (std::size_t n = 1; n <= kBleuMaxOrder; ++n) {
      const auto cn = detail::ngrams(cand, n);
      const auto rn = detail::ngrams(ref, n);
      for (const auto& [g, count] : cn) {
        auto it = rn.find(g);
        if (it != rn.end()) matched[n - 1] += std::min(count, it->second);
        cand_total[n - 1] += count;
      }
      for (const auto& [g, count] : rn) ref_total[n - 1] += count;
    }
  }
  if (c == 0) return r == 0 ? 100.0 : 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < kBleuMaxOrder; ++n) {
    double p;
    if (cand_total[n] == 0 && ref_total[n] == 0) {
      p = 1.0;
    } else if (matched[n] == 0) {
      p = kBleuEpsilon;
    } else {
      p = static_cast<double>(matched[n]) / static_cast<double>(cand_total[n]);
    }
    log_sum += std::log(p);
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(kBleuMaxOrder));
}

class SentenceEmbedder {
 public:
  virtual ~SentenceEmbedder() = default;
  // Unit-norm vector of dim() entries.
  virtual Eigen::VectorXd embed(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
};

// Bag of tokens hashed with FNV-1a (32-bit) into D buckets, L2-normalized.
// Text with no tokens is embedded as "<unk>".
class HashedBagEmbedder final : public SentenceEmbedder {
 public:
  explicit HashedBagEmbedder(std::size_t dim = 256) : dim_(dim) {
    if (dim_ < 1) throw Error(ErrorCode::InvalidConfig, "embedding dimension must be >= 1");
  }

  static std::size_t bucket(std::string_view token, std::size_t dim) { return fnv1a32(token) % dim; }

  Eigen::VectorXd embed(std::string_view text) const override {
    auto tokens = tokenize(text);
    if (tokens.empty()) tokens.emplace_back("<unk>");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
    for (const auto& t : tokens) v(static_cast<Eigen::Index>(bucket(t, dim_))) += 1.0;
    return v / v.norm();
  }
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
};

// 100 x mean cosine; embeddings are unit-norm so cosine is the dot product.
inline double embedding_similarity(const SentenceEmbedder& emb, const std::vector<std::string>& candidates,
                                   const std::vector<std::string>& sources) {
  detail::check_lengths(candidates.size(), sources.size(), "embedding_similarity");
  if (candidates.empty()) throw Error(ErrorCode::EmptyInput, "embedding_similarity needs at least one pair");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += emb.embed(candidates[i]).dot(emb.embed(sources[i]));
  return 100.0 * sum / static_cast<double>(candidates.size());
}

// Negative log-likelihood in extended precision so that corpus perplexity
// of closed-form models comes out exact after rounding to double.
struct LmScore {
  long double nll = 0.0L;
  std::size_t count = 0;
};

class LanguageModelScorer {
 public:
  virtual ~LanguageModelScorer() = default;
  virtual LmScore score(std::string_view text) const = 0;
};

class UniformLM final : public LanguageModelScorer {
 public:
  explicit UniformLM(std::size_t vocab_size) : v_(vocab_size) {
    if (v_ < 1) throw Error(ErrorCode::InvalidConfig, "uniform LM needs a vocabulary of size >= 1");
  }
  LmScore score(std::string_view text) const override {
    const std::size_t n = tokenize(text).size();
    return {static_cast<long double>(n) * std::log(static_cast<long double>(v_)), n};
  }

 private:
  std::size_t v_;
};

// Add-one smoothed unigram model; unseen tokens share one extra slot.
class UnigramLM final : public LanguageModelScorer {
 public:
  explicit UnigramLM(const std::vector<std::string>& texts) {
    for (const auto& t : texts) {
      for (auto& tok : tokenize(t)) {
        ++counts_[std::move(tok)];
        ++total_;
      }
    }
  }

  long double probability(const std::string& token) const {
    auto it = counts_.find(token);
    const long double c = it == counts_.end() ? 0.0L : static_cast<long double>(it->second);
    return (c + 1.0L) / static_cast<long double>(total_ + counts_.size() + 1);
  }

  LmScore score(std::string_view text) const override {
    LmScore s;
    for (const auto& tok : tokenize(text)) {
      s.nll -= std::log(probability(tok));
      ++s.count;
    }
    return s;
  }

  std::size_t types() const { return counts_.size(); }
  std::size_t tokens() const { return total_; }

 private:
  std::map<std::string, std::size_t> counts_;
  std::size_t total_ = 0;
};

// exp(sum NLL / sum count) over the corpus; the sum is compensated.
inline double perplexity(const LanguageModelScorer& lm, const std::vector<std::string>& texts) {
  if (texts.empty()) throw Error(ErrorCode::EmptyInput, "perplexity needs at least one text");
  long double sum = 0.0L, comp = 0.0L;
  std::size_t count = 0;
  for (const auto& t : texts) {
    const LmScore s = lm.score(t);
    const long double next = sum + s.nll;
    comp += std::fabs(sum) >= std::fabs(s.nll) ? (sum - next) + s.nll : (s.nll - next) + sum;
    sum = next;
    count += s.count;
  }
  if (count == 0) throw Error(ErrorCode::EmptyInput, "perplexity needs at least one token");
  return static_cast<double>(std::exp((sum + comp) / static_cast<long double>(count)));
}

template <class C>
concept TextClassifier = requires(const C& c, std::string_view t) {
  { c.classify(t) } -> std::convertible_to<double>;
};

// Percent of outputs the classifier puts above 0.5 (non-toxic).
template <TextClassifier C>
double detox_accuracy(const C& clf, const std::vector<std::string>& outputs) {
  if (outputs.empty()) throw Error(ErrorCode::EmptyInput, "detox_accuracy needs at least one output");
  std::size_t ok = 0;
  for (const auto& o : outputs) ok += clf.classify(o) > 0.5 ? 1 : 0;
  return 100.0 * static_cast<double>(ok) / static_cast<double>(outputs.size());
}

}  // namespace detox
