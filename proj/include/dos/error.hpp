// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dos {

enum class ErrorCode {
  IoFailure,
  MalformedContainer,
  InvariantViolation,
  NonFiniteValue,
  InvalidArgument,
  SameObject,
  UnknownBenchmark,
  ZeroVector,
  LengthMismatch,
  ConstantInput,
  ConstantProfile,
  MissingProfile,
  MissingSpan,
  MissingPooled,
  MissingPair,
  MissingBundle,
  EncoderMismatch,
  DimensionMismatch,
  EmptyInput,
  UnreadableImage,
  UnparseableResponse,
  MissingObjectLabel,
  UnknownLabel,
  EndpointUnavailable,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above; callers
/// branch on code(), the message is for humans.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

  /// Same code, message prefixed with the context it was raised in.
  Error within(std::string_view context) const { return Error(code_, std::string(context) + ": " + detail_); }

private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace dos
