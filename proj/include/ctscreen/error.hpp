#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ctscreen {

enum class ErrorCode {
  BadMagic,
  UnsupportedDatatype,
  TruncatedHeader,
  DataLengthMismatch,
  DecompressError,
  ShapeMismatch,
  EmptySegmentation,
  NoLungRegion,
  ZeroClassCount,
  DegenerateBatch,
  LabelOutOfRange,
  EmptyDataset,
  IncompatibleSpec,
  SingleClassInput,
  MissingClass,
  TooFewSamples,
  MissingMask,
  ProtocolMismatch,
  BadCheckpoint,
  ConfigError,
  ManifestError,
  IoError,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedHeader: return "TruncatedHeader";
    case ErrorCode::DataLengthMismatch: return "DataLengthMismatch";
    case ErrorCode::DecompressError: return "DecompressError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptySegmentation: return "EmptySegmentation";
    case ErrorCode::NoLungRegion: return "NoLungRegion";
    case ErrorCode::ZeroClassCount: return "ZeroClassCount";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::IncompatibleSpec: return "IncompatibleSpec";
    case ErrorCode::SingleClassInput: return "SingleClassInput";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::MissingMask: return "MissingMask";
    case ErrorCode::ProtocolMismatch: return "ProtocolMismatch";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ManifestError: return "ManifestError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace ctscreen
