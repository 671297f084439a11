#pragma once

#include <stdexcept>
#include <string>

namespace pl3d {

enum class ErrorCode {
  InvalidArgument,
  BehindCamera,
  OutOfFrame,
  AllViewsFiltered,
  DegenerateEmbeddings,
  DimensionMismatch,
  EmptyPairSet,
  NoFeaturePairs,
  ZeroVector,
  NonFiniteLoss,
  EmptyQuerySet,
  CorruptHeader,
  MissingFile,
  DimMismatch,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::OutOfFrame: return "OutOfFrame";
    case ErrorCode::AllViewsFiltered: return "AllViewsFiltered";
    case ErrorCode::DegenerateEmbeddings: return "DegenerateEmbeddings";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyPairSet: return "EmptyPairSet";
    case ErrorCode::NoFeaturePairs: return "NoFeaturePairs";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::CorruptHeader: return "CorruptHeader";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::DimMismatch: return "DimMismatch";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pl3d
