// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lora_spectrum/container.hpp"
#include "lora_spectrum/dct.hpp"
#include "lora_spectrum/spectral.hpp"

namespace lora_spectrum {

inline constexpr std::string_view kSparseFormat = "spectral-sparse-v1";
inline constexpr std::string_view kTransformTag = "dct2-ortho-v1";

/// Retained DCT coefficients of one matrix: strictly increasing flat indices
/// below rows * cols, one binary32 value per index, at least one entry.
struct SparseSpectrum {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> flat_indices;
  std::vector<float> values;
  double k_percent = 0.0;
  std::string transform = std::string(kTransformTag);

  bool operator==(const SparseSpectrum&) const = default;
};

SparseSpectrum encode_sparse(std::string name, const Spectrum& f, const MaskResult& mask);

/// Throws CorruptSparse when the invariants above do not hold.
void validate_sparse(const SparseSpectrum& s);

/// Scatters into a zero spectrum and inverts it.
Matrix decode_sparse(const SparseSpectrum& s);

/// Each spectrum becomes "<name>.spectral_indices" (1 x c, F64 holding exact
/// integers) and "<name>.spectral_values" (1 x c, F32). Metadata carries
/// format, transform, k_percent and "shape.<name>" = "m,n"; when spectra
/// disagree on k, "k_percent" is "mixed" and "k_percent.<name>" is set per
/// spectrum. Entries of `extra` are copied through unless they collide with
/// those keys.
AdapterFile pack_sparse_file(const std::vector<SparseSpectrum>& spectra,
                             const std::map<std::string, std::string>& extra = {});

/// Inverse of pack_sparse_file. Throws NotSpectralFile without the format
/// tag, CorruptSparse for malformed index/value tensors.
std::vector<SparseSpectrum> unpack_sparse_file(const AdapterFile& file);

struct StorageReport {
  std::uint64_t base_param_count = 0;
  double k_percent = 0.0;

  // Stored = round(base * k / 100), reduction = base / stored.
  std::uint64_t nominal_stored = 0;
  double nominal_reduction = 0.0;

  // Literal mask accounting: retained values plus one 32-bit index each.
  std::uint64_t coefficient_values = 0;
  std::uint64_t index_entries = 0;
  std::uint64_t coefficient_total = 0;
  double coefficient_reduction = 0.0;
  bool coefficient_exceeds_base = false;
};

StorageReport storage_report(std::uint64_t base_param_count, double k_percent,
                             const std::vector<std::uint64_t>& coeff_counts);

/// Reduction rounded to one decimal, e.g. 19.9993 -> 20.0.
double round_one_decimal(double x);

/// "29645 (10.0x)"
std::string format_nominal_accounting(const StorageReport& report);

/// Shortest text that parses back to the same double.
std::string format_double(double x);

}  // namespace lora_spectrum
