#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cvgl {

enum class ErrorCode {
  // data errors
  ParseError,
  DuplicateId,
  EmptyManifest,
  MissingView,
  BadImage,
  GridTooLarge,
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  DimMismatch,
  ZeroVector,
  BatchMismatch,
  NonFiniteLoss,
  NonFiniteParam,
  MissingEmbedding,
  DivergedTraining,
  EmptyTable,
  LengthMismatch,
  MissingTruth,
  KMismatch,
  Io,
  // usage errors
  Usage,
  // transport errors
  Transport,
};

enum class ErrorClass { Usage, Data, Transport };

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyManifest: return "EmptyManifest";
    case ErrorCode::MissingView: return "MissingView";
    case ErrorCode::BadImage: return "BadImage";
    case ErrorCode::GridTooLarge: return "GridTooLarge";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::BatchMismatch: return "BatchMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteParam: return "NonFiniteParam";
    case ErrorCode::MissingEmbedding: return "MissingEmbedding";
    case ErrorCode::DivergedTraining: return "DivergedTraining";
    case ErrorCode::EmptyTable: return "EmptyTable";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingTruth: return "MissingTruth";
    case ErrorCode::KMismatch: return "KMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Usage: return "Usage";
    case ErrorCode::Transport: return "Transport";
  }
  return "Unknown";
}

constexpr ErrorClass classify(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage: return ErrorClass::Usage;
    case ErrorCode::Transport: return ErrorClass::Transport;
    default: return ErrorClass::Data;
  }
}

/// Every failure raised by the engine. The code selects the CLI exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorClass error_class() const noexcept { return classify(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace cvgl
