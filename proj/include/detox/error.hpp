#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace detox {

enum class ErrorCode {
  MalformedRecord,
  MissingVariant,
  MissingAnnotation,
  InsufficientData,
  TranslationFailed,
  SequenceTooLong,
  NonFiniteLoss,
  CorruptModelFile,
  VocabMismatch,
  ShapeMismatch,
  MissingComponent,
  EmptySplit,
  EmptySequence,
  EmptyLexicon,
  EmptyInput,
  LengthMismatch,
  InsufficientOutputs,
  InvalidConfig,
  AdapterUnavailable,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::MissingVariant: return "MissingVariant";
    case ErrorCode::MissingAnnotation: return "MissingAnnotation";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::TranslationFailed: return "TranslationFailed";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::CorruptModelFile: return "CorruptModelFile";
    case ErrorCode::VocabMismatch: return "VocabMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::MissingComponent: return "MissingComponent";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::EmptyLexicon: return "EmptyLexicon";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InsufficientOutputs: return "InsufficientOutputs";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::AdapterUnavailable: return "AdapterUnavailable";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

// Every failure in the toolkit is reported through this one exception type;
// callers dispatch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace detox
