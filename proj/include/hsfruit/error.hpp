#pragma once

#include <stdexcept>
#include <string>

namespace hsf {

// Numeric values are part of the C ABI (see hsfruit.h); append only.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kShapeMismatch = 2,
  kOutOfRange = 3,
  kIo = 4,
  kMissingHeaderKey = 5,
  kPayloadSize = 6,
  kUnknownInterleave = 7,
  kFormat = 8,
  kNoVisibleBand = 9,
  kEmptyMask = 10,
  kSingleClass = 11,
  kInsufficientData = 12,
  kState = 13,
  kNumerical = 14,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace hsf
