// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/codec.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <set>
#include <system_error>

#include "lora_spectrum/error.hpp"

namespace lora_spectrum {

namespace {

constexpr std::string_view kIndexSuffix = ".spectral_indices";
constexpr std::string_view kValueSuffix = ".spectral_values";

bool parse_double(std::string_view text, double& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

bool parse_size(std::string_view text, std::size_t& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

std::string metadata_or(const std::map<std::string, std::string>& meta, const std::string& key) {
  const auto it = meta.find(key);
  if (it == meta.end()) throw Error(ErrorKind::kCorruptSparse, "missing metadata key '" + key + "'");
  return it->second;
}

}  // namespace

std::string format_double(double x) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

SparseSpectrum encode_sparse(std::string name, const Spectrum& f, const MaskResult& mask) {
  if (mask.rows != f.rows() || mask.cols != f.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "mask shape does not match spectrum");
  }
  SparseSpectrum s;
  s.name = std::move(name);
  s.rows = f.rows();
  s.cols = f.cols();
  s.k_percent = mask.k_percent_requested;
  s.flat_indices = mask.retained_flat_indices;
  s.values.reserve(s.flat_indices.size());
  const auto coeffs = f.coefficients.data();
  for (std::uint32_t idx : s.flat_indices) {
    if (idx >= coeffs.size()) throw Error(ErrorKind::kShapeMismatch, "mask index out of range");
    s.values.push_back(static_cast<float>(coeffs[idx]));
  }
  return s;
}

void validate_sparse(const SparseSpectrum& s) {
  if (s.rows == 0 || s.cols == 0) throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' has an empty shape");
  if (s.flat_indices.empty()) throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' retains no coefficients");
  if (s.flat_indices.size() != s.values.size()) {
    throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' has mismatched index and value counts");
  }
  if (s.transform != kTransformTag) {
    throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' uses unknown transform '" + s.transform + "'");
  }
  const std::uint64_t limit = static_cast<std::uint64_t>(s.rows) * s.cols;
  for (std::size_t k = 0; k < s.flat_indices.size(); ++k) {
    if (s.flat_indices[k] >= limit) throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' index out of range");
    if (k > 0 && s.flat_indices[k] <= s.flat_indices[k - 1]) {
      throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' indices are not strictly increasing");
    }
    if (!std::isfinite(s.values[k])) throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' has a non-finite value");
  }
}

Matrix decode_sparse(const SparseSpectrum& s) {
  validate_sparse(s);
  Spectrum f{Matrix(s.rows, s.cols)};
  auto dst = f.coefficients.data();
  for (std::size_t k = 0; k < s.flat_indices.size(); ++k) dst[s.flat_indices[k]] = static_cast<double>(s.values[k]);
  return idct2(f);
}

AdapterFile pack_sparse_file(const std::vector<SparseSpectrum>& spectra,
                             const std::map<std::string, std::string>& extra) {
  AdapterFile file;
  std::set<std::string> names;
  for (const auto& s : spectra) {
    if (!names.insert(s.name).second) throw Error(ErrorKind::kDuplicateName, "spectrum '" + s.name + "' appears twice");
  }
  bool uniform_k = true;
  for (const auto& s : spectra) uniform_k = uniform_k && s.k_percent == spectra.front().k_percent;

  file.metadata["format"] = std::string(kSparseFormat);
  file.metadata["transform"] = std::string(kTransformTag);
  file.metadata["k_percent"] = spectra.empty() || !uniform_k ? "mixed" : format_double(spectra.front().k_percent);
  for (const auto& s : spectra) {
    validate_sparse(s);
    const std::size_t c = s.flat_indices.size();
    file.tensors.push_back(TensorRecord{s.name + std::string(kIndexSuffix), DType::kF64, {1, c},
                                        std::vector<double>(s.flat_indices.begin(), s.flat_indices.end())});
    file.tensors.push_back(TensorRecord{s.name + std::string(kValueSuffix), DType::kF32, {1, c},
                                        std::vector<double>(s.values.begin(), s.values.end())});
    file.metadata["shape." + s.name] = std::to_string(s.rows) + "," + std::to_string(s.cols);
    if (!uniform_k) file.metadata["k_percent." + s.name] = format_double(s.k_percent);
  }
  for (const auto& [key, value] : extra) file.metadata.emplace(key, value);
  return file;
}

std::vector<SparseSpectrum> unpack_sparse_file(const AdapterFile& file) {
  const auto format = file.metadata.find("format");
  if (format == file.metadata.end() || format->second != kSparseFormat) {
    throw Error(ErrorKind::kNotSpectralFile, "container lacks format=spectral-sparse-v1 metadata");
  }
  const std::string transform = metadata_or(file.metadata, "transform");
  const std::string file_k = metadata_or(file.metadata, "k_percent");

  std::vector<SparseSpectrum> out;
  for (const auto& t : file.tensors) {
    if (!t.name.ends_with(kIndexSuffix)) continue;
    SparseSpectrum s;
    s.name = t.name.substr(0, t.name.size() - kIndexSuffix.size());
    s.transform = transform;

    const TensorRecord* values = file.find(s.name + std::string(kValueSuffix));
    if (values == nullptr) throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' has indices but no values");
    if (t.shape.size() != 2 || t.shape[0] != 1 || values->shape.size() != 2 || values->shape[0] != 1) {
      throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' tensors are not 1 x c");
    }

    const std::string shape = metadata_or(file.metadata, "shape." + s.name);
    const std::size_t comma = shape.find(',');
    if (comma == std::string::npos || !parse_size(std::string_view(shape).substr(0, comma), s.rows) ||
        !parse_size(std::string_view(shape).substr(comma + 1), s.cols)) {
      throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' has unreadable shape '" + shape + "'");
    }
    const auto per_k = file.metadata.find("k_percent." + s.name);
    const std::string& k_text = per_k != file.metadata.end() ? per_k->second : file_k;
    if (!parse_double(k_text, s.k_percent)) {
      throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' has unreadable k_percent '" + k_text + "'");
    }

    s.flat_indices.reserve(t.data.size());
    for (double x : t.data) {
      if (!(x >= 0.0 && x <= 4294967295.0) || x != std::floor(x)) {
        throw Error(ErrorKind::kCorruptSparse, "'" + s.name + "' index is not a 32-bit unsigned integer");
      }
      s.flat_indices.push_back(static_cast<std::uint32_t>(x));
    }
    s.values.reserve(values->data.size());
    for (double x : values->data) s.values.push_back(static_cast<float>(x));
    validate_sparse(s);
    out.push_back(std::move(s));
  }
  for (const auto& t : file.tensors) {
    if (t.name.ends_with(kValueSuffix) &&
        file.find(t.name.substr(0, t.name.size() - kValueSuffix.size()) + std::string(kIndexSuffix)) == nullptr) {
      throw Error(ErrorKind::kCorruptSparse, "'" + t.name + "' has no matching index tensor");
    }
  }
  std::sort(out.begin(), out.end(), [](const SparseSpectrum& a, const SparseSpectrum& b) { return a.name < b.name; });
  return out;
}

double round_one_decimal(double x) { return std::round(x * 10.0) / 10.0; }

StorageReport storage_report(std::uint64_t base_param_count, double k_percent,
                             const std::vector<std::uint64_t>& coeff_counts) {
  if (base_param_count == 0) throw Error(ErrorKind::kInvalidSpec, "base parameter count must be positive");
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw Error(ErrorKind::kInvalidSpec, "k must lie in (0, 100]");
  StorageReport r;
  r.base_param_count = base_param_count;
  r.k_percent = k_percent;
  // Half-way cases (14822.5) round up, as std::round does away from zero.
  r.nominal_stored = static_cast<std::uint64_t>(
      std::max(1.0, std::round(static_cast<double>(base_param_count) * k_percent / 100.0)));
  r.nominal_reduction = static_cast<double>(base_param_count) / static_cast<double>(r.nominal_stored);

  for (std::uint64_t c : coeff_counts) r.coefficient_values += c;
  r.index_entries = r.coefficient_values;
  r.coefficient_total = r.coefficient_values + r.index_entries;
  r.coefficient_reduction = r.coefficient_total > 0 ? static_cast<double>(base_param_count) /
                                                          static_cast<double>(r.coefficient_total)
                                                    : 0.0;
  r.coefficient_exceeds_base = r.coefficient_total > base_param_count;
  return r;
}

std::string format_nominal_accounting(const StorageReport& report) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%llu (%.1fx)", static_cast<unsigned long long>(report.nominal_stored),
                round_one_decimal(report.nominal_reduction));
  return buf;
}

}  // namespace lora_spectrum
