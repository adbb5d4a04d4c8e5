// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/error.hpp"

namespace lora_spectrum {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kTruncatedFile: return "TruncatedFile";
    case ErrorKind::kMalformedHeader: return "MalformedHeader";
    case ErrorKind::kOffsetError: return "OffsetError";
    case ErrorKind::kDuplicateName: return "DuplicateName";
    case ErrorKind::kShapeMismatch: return "ShapeMismatch";
    case ErrorKind::kNonFinite: return "NonFinite";
    case ErrorKind::kNoConvergence: return "NoConvergence";
    case ErrorKind::kZeroSpectrum: return "ZeroSpectrum";
    case ErrorKind::kCorruptSparse: return "CorruptSparse";
    case ErrorKind::kNotSpectralFile: return "NotSpectralFile";
    case ErrorKind::kDegenerateInput: return "DegenerateInput";
    case ErrorKind::kInvalidSpec: return "InvalidSpec";
  }
  return "Unknown";
}

}  // namespace lora_spectrum
