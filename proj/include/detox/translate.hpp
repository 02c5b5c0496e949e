#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <utility>

#include "detox/text.hpp"

namespace detox {

// Translation provider. Implementations throw on failure; callers wrap the
// failure into ErrorCode::TranslationFailed with the offending item named.
class Translator {
 public:
  virtual ~Translator() = default;
  virtual std::string translate(std::string_view text) const = 0;
  virtual std::string target_lang() const = 0;
};

class IdentityTranslator final : public Translator {
 public:
  explicit IdentityTranslator(std::string target_lang = "en") : lang_(std::move(target_lang)) {}
  std::string translate(std::string_view text) const override { return std::string(text); }
  std::string target_lang() const override { return lang_; }

 private:
  std::string lang_;
};

// Whole-string lookup first, then token-by-token replacement on whitespace
// tokens; unmapped tokens pass through.
class DictionaryTranslator final : public Translator {
 public:
  DictionaryTranslator(std::map<std::string, std::string> table, std::string target_lang)
      : table_(std::move(table)), lang_(std::move(target_lang)) {}

  std::string translate(std::string_view text) const override {
    if (auto it = table_.find(std::string(text)); it != table_.end()) return it->second;
    auto tokens = split_whitespace(text);
    for (auto& t : tokens) {
      if (auto it = table_.find(t); it != table_.end()) t = it->second;
    }
    return join(tokens);
  }
  std::string target_lang() const override { return lang_; }

 private:
  std::map<std::string, std::string> table_;
  std::string lang_;
};

// Adapts any callable; handy for tests and for wrapping external services.
class FunctionTranslator final : public Translator {
 public:
  using Fn = std::function<std::string(std::string_view)>;
  FunctionTranslator(Fn fn, std::string target_lang)
      : fn_(std::move(fn)), lang_(std::move(target_lang)) {}
  std::string translate(std::string_view text) const override { return fn_(text); }
  std::string target_lang() const override { return lang_; }

 private:
  Fn fn_;
  std::string lang_;
};

}  // namespace detox
