#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gpose {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateTransform,
  kDegenerateCorrespondence,
  kFormat,
  kTruncated,
  kNoCandidates,
  kNoCorrespondences,
  kInsufficientData,
  kInvalidWeights,
  kUnreliableAngle,
  kDegenerateBatch,
  kInvalidModel,
  kBehindCamera,
  kEstimationFailed,
  kOnboarding,
  kIo,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by binary readers; offset is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(ErrorCode code, std::uint64_t offset, const std::string& what)
      : Error(code, what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kDegenerateTransform: return "degenerate-transform";
    case ErrorCode::kDegenerateCorrespondence: return "degenerate-correspondence";
    case ErrorCode::kFormat: return "format-error";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kNoCandidates: return "no-candidates";
    case ErrorCode::kNoCorrespondences: return "no-correspondences";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kInvalidWeights: return "invalid-weights";
    case ErrorCode::kUnreliableAngle: return "unreliable-angle";
    case ErrorCode::kDegenerateBatch: return "degenerate-batch";
    case ErrorCode::kInvalidModel: return "invalid-model";
    case ErrorCode::kBehindCamera: return "behind-camera";
    case ErrorCode::kEstimationFailed: return "estimation-failed";
    case ErrorCode::kOnboarding: return "onboarding-error";
    case ErrorCode::kIo: return "io-error";
  }
  return "unknown";
}

}  // namespace gpose
