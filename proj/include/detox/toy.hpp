#pragma once

#include <array>
#include <cstdio>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "detox/classifier.hpp"
#include "detox/corpus.hpp"
#include "detox/methods.hpp"
#include "detox/random.hpp"

namespace detox::toy {

// Synthetic parallel data for desk-scale runs: sentence templates with one
// planted toxic word on the toxic side and a fixed neutral substitute in the
// same slot on the civil side.

// Planted lexicon and the substitute used on the civil side.
inline constexpr std::array<std::pair<std::string_view, std::string_view>, 10> kPlanted = {{
    {"idiot", "person"},
    {"moron", "fellow"},
    {"stupid", "odd"},
    {"damn", "very"},
    {"crap", "stuff"},
    {"jerk", "man"},
    {"dumb", "strange"},
    {"loser", "player"},
    {"shitty", "poor"},
    {"bloody", "really"},
}};

inline constexpr std::array<std::string_view, 16> kNouns = {
    "car",   "house", "team",  "game",  "movie", "phone",   "boss",   "store",
    "park",  "city",  "school", "party", "song", "book", "meeting", "office"};

// {T} is the planted slot, {A} and {B} are noun slots.
inline constexpr std::array<std::string_view, 10> kDetoxTemplates = {
    "i think the {A} near the {B} is {T} today .",
    "why did the {A} call the {B} a {T} again ?",
    "tell the {A} that this {T} {B} is late .",
    "my {A} says your {B} looks {T} now .",
    "that {T} {A} keeps talking about the {B} .",
    "we saw a {T} {A} at the {B} yesterday .",
    "the {A} and the {B} are both {T} .",
    "stop sending that {T} {A} to my {B} .",
    "everyone at the {A} knows the {B} is {T} .",
    "{T} {A} , please fix the {B} first .",
};

// Sentiment-flavoured templates for the auxiliary transfer task; they share
// the planted lexicon and noun pool with the detox templates.
inline constexpr std::array<std::string_view, 6> kAuxTemplates = {
    "the {A} at the {B} was {T} last night .",
    "honestly the {B} felt {T} compared to the {A} .",
    "our {A} had a {T} {B} this week .",
    "a {T} {A} ruined the whole {B} .",
    "the new {A} from the {B} is {T} .",
    "nobody liked the {T} {A} or the {B} .",
};

namespace detail {
inline std::string fill(std::string_view tmpl, std::string_view t, std::string_view a, std::string_view b) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.substr(i, 3) == "{T}") {
      out += t;
      i += 3;
    } else if (tmpl.substr(i, 3) == "{A}") {
      out += a;
      i += 3;
    } else if (tmpl.substr(i, 3) == "{B}") {
      out += b;
      i += 3;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

template <std::size_t N>
std::vector<ParallelPair> generate(const std::array<std::string_view, N>& templates, std::size_t n,
                                   std::uint64_t seed, std::string_view prefix) {
  Rng rng(seed);
  std::set<std::string> seen;
  std::vector<ParallelPair> pairs;
  while (pairs.size() < n) {
    const auto& tmpl = templates[rng.below(N)];
    const auto& [toxic_word, civil_word] = kPlanted[rng.below(kPlanted.size())];
    const auto a = kNouns[rng.below(kNouns.size())];
    auto b = kNouns[rng.below(kNouns.size())];
    if (a == b) continue;
    std::string toxic = fill(tmpl, toxic_word, a, b);
    if (!seen.insert(toxic).second) continue;
    char id[32];
    std::snprintf(id, sizeof(id), "%.*s-%04zu", static_cast<int>(prefix.size()), prefix.data(), pairs.size());
    pairs.push_back({id, Language::en, std::move(toxic), fill(tmpl, civil_word, a, b)});
  }
  return pairs;
}
}  // namespace detail

inline std::vector<ParallelPair> detox_corpus(std::size_t n = 300, std::uint64_t seed = 13) {
  return detail::generate(kDetoxTemplates, n, seed, "toy");
}

inline std::vector<ParallelPair> aux_corpus(std::size_t n = 200, std::uint64_t seed = 29) {
  return detail::generate(kAuxTemplates, n, seed, "aux");
}

inline std::vector<std::string> planted_words() {
  std::vector<std::string> out;
  for (const auto& [t, c] : kPlanted) out.emplace_back(t);
  return out;
}

// Desk-scale training preset for the toy task. The step size and epoch count
// are far above the full-size defaults because the micro backbone starts
// from random weights.
inline constexpr SplitSizes kSplitSizes{200, 50, 50};
inline constexpr SplitSizes kAuxSplitSizes{200, 0, 0};

inline MicroConfig micro_config(std::size_t vocab_size, std::uint64_t seed = 1) {
  MicroConfig c;
  c.vocab_size = vocab_size;
  c.max_len = 24;
  c.seed = seed;
  return c;
}

inline MethodConfig method_config(Method m, std::uint64_t seed = 1) {
  MethodConfig c;
  c.method = m;
  c.epochs = 30;
  c.batch_size = 8;
  c.optimizer.lr = 1e-2;
  c.seed = seed;
  return c;
}

inline ClassifierConfig classifier_config(const MicroConfig& model, std::uint64_t seed = 1) {
  ClassifierConfig c;
  c.model = model;
  c.epochs = 10;
  c.batch_size = 8;
  c.optimizer.lr = 1e-2;
  c.seed = seed;
  return c;
}

}  // namespace detox::toy
