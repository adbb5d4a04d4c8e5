// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lora_spectrum {

enum class ErrorKind {
  kTruncatedFile,
  kMalformedHeader,
  kOffsetError,
  kDuplicateName,
  kShapeMismatch,
  kNonFinite,
  kNoConvergence,
  kZeroSpectrum,
  kCorruptSparse,
  kNotSpectralFile,
  kDegenerateInput,
  kInvalidSpec,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for every recoverable failure in the library.
/// Callers dispatch on kind(); the CLI maps kinds onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace lora_spectrum
