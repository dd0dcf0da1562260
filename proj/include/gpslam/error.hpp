#pragma once

#include <stdexcept>
#include <string>

namespace gpslam {

enum class ErrorCode {
  kBehindCamera,
  kDegenerateLine,
  kInsufficientParallax,
  kTooFewSegments,
  kVpAtMidpoint,
  kRankDeficient,
  kNotParallel,
  kNotCollinear,
  kGaugeUnfixed,
  kMissingVariable,
  kInvalidArgument,
  kParseError,
  kNonMonotonicTimestamps,
  kInsufficientPairs,
  kDegenerateGeometry,
  kStageFailure,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBehindCamera: return "behind camera";
    case ErrorCode::kDegenerateLine: return "degenerate line";
    case ErrorCode::kInsufficientParallax: return "insufficient parallax";
    case ErrorCode::kTooFewSegments: return "too few segments";
    case ErrorCode::kVpAtMidpoint: return "vp at segment midpoint";
    case ErrorCode::kRankDeficient: return "rank deficient";
    case ErrorCode::kNotParallel: return "not parallel";
    case ErrorCode::kNotCollinear: return "not collinear";
    case ErrorCode::kGaugeUnfixed: return "gauge unfixed";
    case ErrorCode::kMissingVariable: return "missing variable";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kParseError: return "parse error";
    case ErrorCode::kNonMonotonicTimestamps: return "non-monotonic timestamps";
    case ErrorCode::kInsufficientPairs: return "insufficient pairs";
    case ErrorCode::kDegenerateGeometry: return "degenerate geometry";
    case ErrorCode::kStageFailure: return "stage failure";
  }
  return "unknown";
}

/// Library-wide exception. `code()` identifies the failure class; `what()`
/// carries the code name plus optional detail.
class Error : public std::runtime_error {
 public:
  explicit Error(ErrorCode code, const std::string& detail = {})
      : std::runtime_error(detail.empty() ? std::string(to_string(code))
                                          : std::string(to_string(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gpslam
