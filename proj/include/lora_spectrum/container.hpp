// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lora_spectrum/linalg.hpp"

namespace lora_spectrum {

// ---------------------------------------------------------------------------
// Tensor container: 8-byte little-endian header length H, H bytes of UTF-8
// JSON mapping tensor names to {dtype, shape, data_offsets}, then the raw
// little-endian row-major buffer. "__metadata__" holds a text->text map.
// ---------------------------------------------------------------------------

enum class DType { kF64, kF32, kF16 };

std::string_view dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

struct TensorRecord {
  std::string name;
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;  // row-major, upconverted to binary64

  std::uint64_t element_count() const;
  bool operator==(const TensorRecord&) const = default;
};

struct AdapterFile {
  std::vector<TensorRecord> tensors;
  std::map<std::string, std::string> metadata;

  const TensorRecord* find(std::string_view name) const;
};

/// Same tensor set (order-insensitive), shapes, dtypes, values and metadata.
bool equivalent(const AdapterFile& a, const AdapterFile& b);

/// Parses a container. Tensors keep header order.
AdapterFile read_container(std::span<const std::uint8_t> bytes);

enum class WritePolicy {
  kF32,         // every tensor narrowed to binary32
  kF64,         // every tensor stored as binary64
  kAsRecorded,  // each tensor keeps its own dtype; F16 records are widened to F32
};

/// Header keys sorted lexicographically, data_offsets contiguous in key
/// order starting at 0, no header padding.
std::vector<std::uint8_t> write_container(const AdapterFile& file, WritePolicy policy);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
AdapterFile read_container_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Converts a 2D tensor to a Matrix; throws ShapeMismatch for other ranks.
Matrix to_matrix(const TensorRecord& tensor);
TensorRecord from_matrix(std::string name, const Matrix& m, DType dtype);

// ---------------------------------------------------------------------------
// Low-rank factor pairing
// ---------------------------------------------------------------------------

enum class ModuleClass { kQuery, kValue, kKey, kOther };

struct ModuleKind {
  ModuleClass cls = ModuleClass::kOther;
  std::string other_name;  // set only for kOther

  std::string label() const;
  auto operator<=>(const ModuleKind&) const = default;
};

/// A = lora_A (r x n), B = lora_B (m x r); merged update is scale * B * A.
struct LoraPair {
  std::string prefix;
  Matrix a_matrix;
  Matrix b_matrix;
  std::optional<int> layer_index;
  ModuleKind module_kind;
  double scale = 1.0;

  std::size_t rank() const { return a_matrix.rows(); }
};

struct OrphanFactor {
  std::string prefix;
  std::string tensor_name;
  std::string reason;
};

enum class ScaleSource { kDefault, kMetadata, kOverride };
std::string_view to_string(ScaleSource source);

struct PairingResult {
  std::vector<LoraPair> pairs;  // ordered by (layer_index, module_kind, prefix)
  std::vector<OrphanFactor> orphans;
  double scale = 1.0;
  ScaleSource scale_source = ScaleSource::kDefault;
};

std::optional<int> parse_layer_index(std::string_view name);
ModuleKind parse_module_kind(std::string_view prefix);

/// Groups "...lora_A..." / "...lora_B..." tensors by prefix. Orphans are
/// reported, not thrown; inner-dimension or rank mismatches throw ShapeMismatch.
PairingResult pair_lora(const AdapterFile& file,
                        std::optional<double> scale_override = std::nullopt);

Matrix merge_delta(const LoraPair& pair);

/// One analyzable weight update: a merged LoRA pair, or a dense
/// "<prefix>.delta_w" tensor stored directly in the container.
struct DeltaUnit {
  std::string prefix;
  std::optional<int> layer_index;
  ModuleKind module_kind;
  double scale = 1.0;
  bool from_pair = true;
  Matrix delta;
};

struct DeltaCollection {
  std::vector<DeltaUnit> units;  // ordered by (layer_index, module_kind, prefix)
  std::vector<OrphanFactor> orphans;
  double scale = 1.0;
  ScaleSource scale_source = ScaleSource::kDefault;
  std::size_t lora_parameter_count = 0;  // sum of r (m + n) over pairs
};

DeltaCollection collect_deltas(const AdapterFile& file,
                               std::optional<double> scale_override = std::nullopt);

/// Sort key shared by every per-matrix output: absent layer indices last.
bool unit_order(const std::optional<int>& la, const ModuleKind& ka, const std::string& pa,
                const std::optional<int>& lb, const ModuleKind& kb, const std::string& pb);

}  // namespace lora_spectrum
