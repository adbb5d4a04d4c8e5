// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/container.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <system_error>
#include <unistd.h>

#include <json.hpp>

#include "lora_spectrum/error.hpp"

namespace lora_spectrum {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::string_view kMetadataKey = "__metadata__";

std::optional<DType> parse_dtype(std::string_view s) {
  if (s == "F64") return DType::kF64;
  if (s == "F32") return DType::kF32;
  if (s == "F16") return DType::kF16;
  return std::nullopt;
}

std::uint64_t load_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint32_t load_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void store_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void store_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

double half_to_double(std::uint16_t h) {
  const int sign = (h >> 15) & 1;
  const int exponent = (h >> 10) & 0x1f;
  const int mantissa = h & 0x3ff;
  double value;
  if (exponent == 0) {
    value = std::ldexp(static_cast<double>(mantissa), -24);
  } else if (exponent == 31) {
    value = mantissa == 0 ? std::numeric_limits<double>::infinity()
                          : std::numeric_limits<double>::quiet_NaN();
  } else {
    value = std::ldexp(static_cast<double>(mantissa | 0x400), exponent - 25);
  }
  return sign ? -value : value;
}

std::uint64_t checked_product(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (std::uint64_t d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
      throw Error(ErrorKind::kMalformedHeader, "shape product overflows");
    }
    n *= d;
  }
  return n;
}

struct PendingTensor {
  TensorRecord record;
  std::uint64_t start;
  std::uint64_t end;
};

PendingTensor parse_entry(const std::string& name, const ordered_json& entry) {
  if (!entry.is_object()) throw Error(ErrorKind::kMalformedHeader, "entry '" + name + "' is not an object");
  const auto dtype_it = entry.find("dtype");
  const auto shape_it = entry.find("shape");
  const auto offsets_it = entry.find("data_offsets");
  if (dtype_it == entry.end() || shape_it == entry.end() || offsets_it == entry.end()) {
    throw Error(ErrorKind::kMalformedHeader, "entry '" + name + "' lacks dtype, shape or data_offsets");
  }
  if (!dtype_it->is_string()) throw Error(ErrorKind::kMalformedHeader, "dtype of '" + name + "' is not text");
  const auto dtype = parse_dtype(dtype_it->get<std::string>());
  if (!dtype) {
    throw Error(ErrorKind::kMalformedHeader,
                "unsupported dtype '" + dtype_it->get<std::string>() + "' for '" + name + "'");
  }

  PendingTensor t{TensorRecord{name, *dtype, {}, {}}, 0, 0};
  if (!shape_it->is_array()) throw Error(ErrorKind::kMalformedHeader, "shape of '" + name + "' is not a list");
  for (const auto& d : *shape_it) {
    if (!d.is_number_unsigned()) {
      throw Error(ErrorKind::kMalformedHeader, "shape of '" + name + "' has a negative or non-integer entry");
    }
    t.record.shape.push_back(d.get<std::uint64_t>());
  }
  if (!offsets_it->is_array() || offsets_it->size() != 2 || !(*offsets_it)[0].is_number_unsigned() ||
      !(*offsets_it)[1].is_number_unsigned()) {
    throw Error(ErrorKind::kOffsetError, "data_offsets of '" + name + "' must be two non-negative integers");
  }
  t.start = (*offsets_it)[0].get<std::uint64_t>();
  t.end = (*offsets_it)[1].get<std::uint64_t>();
  return t;
}

void decode_values(TensorRecord& record, const std::uint8_t* p, std::uint64_t count) {
  record.data.resize(count);
  switch (record.dtype) {
    case DType::kF64:
      for (std::uint64_t k = 0; k < count; ++k) record.data[k] = std::bit_cast<double>(load_u64(p + 8 * k));
      break;
    case DType::kF32:
      for (std::uint64_t k = 0; k < count; ++k) {
        record.data[k] = static_cast<double>(std::bit_cast<float>(load_u32(p + 4 * k)));
      }
      break;
    case DType::kF16:
      for (std::uint64_t k = 0; k < count; ++k) {
        const auto h = static_cast<std::uint16_t>(p[2 * k] | (p[2 * k + 1] << 8));
        record.data[k] = half_to_double(h);
      }
      break;
  }
}

bool parse_number(std::string_view text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first != last && *first == ' ') ++first;
  while (last != first && *(last - 1) == ' ') --last;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last && std::isfinite(out);
}

std::vector<std::string_view> split_segments(std::string_view name) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= name.size()) {
    const std::size_t dot = name.find('.', start);
    const std::size_t end = dot == std::string_view::npos ? name.size() : dot;
    out.push_back(name.substr(start, end - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return out;
}

// Returns the factor letter ('A' or 'B') and the prefix before it.
std::optional<std::pair<char, std::string>> factor_of(const std::string& name) {
  const std::size_t a = name.find("lora_A");
  const std::size_t b = name.find("lora_B");
  if (a == std::string::npos && b == std::string::npos) return std::nullopt;
  const bool is_a = a != std::string::npos && (b == std::string::npos || a < b);
  std::string prefix = name.substr(0, is_a ? a : b);
  while (!prefix.empty() && (prefix.back() == '.' || prefix.back() == '_' || prefix.back() == '/')) {
    prefix.pop_back();
  }
  return std::make_pair(is_a ? 'A' : 'B', prefix);
}

}  // namespace

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF64: return "F64";
    case DType::kF32: return "F32";
    case DType::kF16: return "F16";
  }
  return "F64";
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF64: return 8;
    case DType::kF32: return 4;
    case DType::kF16: return 2;
  }
  return 8;
}

std::uint64_t TensorRecord::element_count() const { return checked_product(shape); }

const TensorRecord* AdapterFile::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

bool equivalent(const AdapterFile& a, const AdapterFile& b) {
  if (a.metadata != b.metadata || a.tensors.size() != b.tensors.size()) return false;
  for (const auto& t : a.tensors) {
    const TensorRecord* other = b.find(t.name);
    if (other == nullptr || !(*other == t)) return false;
  }
  return true;
}

AdapterFile read_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) throw Error(ErrorKind::kTruncatedFile, "file shorter than the 8-byte header length");
  const std::uint64_t header_len = load_u64(bytes.data());
  if (header_len > bytes.size() - 8) {
    throw Error(ErrorKind::kTruncatedFile, "declared header length " + std::to_string(header_len) +
                                               " exceeds file size " + std::to_string(bytes.size()));
  }
  const auto* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
  ordered_json header;
  try {
    // JSON objects may legally repeat keys; tensor names may not.
    std::set<std::string> seen;
    auto reject_duplicates = [&](int depth, nlohmann::json::parse_event_t event, ordered_json& parsed) {
      if (depth == 1 && event == nlohmann::json::parse_event_t::key && !seen.insert(parsed.get<std::string>()).second) {
        throw Error(ErrorKind::kDuplicateName, "header names '" + parsed.get<std::string>() + "' twice");
      }
      return true;
    };
    header = ordered_json::parse(header_begin, header_begin + header_len, reject_duplicates);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedHeader, std::string("invalid header JSON: ") + e.what());
  }
  if (!header.is_object()) throw Error(ErrorKind::kMalformedHeader, "header is not a JSON object");

  const std::span<const std::uint8_t> buffer = bytes.subspan(8 + header_len);
  AdapterFile file;
  std::vector<PendingTensor> pending;
  for (const auto& [key, value] : header.items()) {
    if (key == kMetadataKey) {
      if (!value.is_object()) throw Error(ErrorKind::kMalformedHeader, "__metadata__ is not an object");
      for (const auto& [mk, mv] : value.items()) {
        if (!mv.is_string()) throw Error(ErrorKind::kMalformedHeader, "metadata value for '" + mk + "' is not text");
        file.metadata.emplace(mk, mv.get<std::string>());
      }
      continue;
    }
    pending.push_back(parse_entry(key, value));
  }

  // Offsets: in range, sized exactly, and non-overlapping.
  std::vector<const PendingTensor*> by_start;
  for (const auto& t : pending) {
    if (t.end < t.start) throw Error(ErrorKind::kOffsetError, "data_offsets of '" + t.record.name + "' are reversed");
    const std::uint64_t count = t.record.element_count();
    const std::uint64_t elem = dtype_size(t.record.dtype);
    if (count > std::numeric_limits<std::uint64_t>::max() / elem || t.end - t.start != count * elem) {
      throw Error(ErrorKind::kOffsetError, "data_offsets of '" + t.record.name + "' span " +
                                               std::to_string(t.end - t.start) + " bytes, expected " +
                                               std::to_string(count * elem));
    }
    if (t.end > buffer.size()) {
      throw Error(ErrorKind::kTruncatedFile, "tensor '" + t.record.name + "' ends at byte " +
                                                 std::to_string(t.end) + " of a " +
                                                 std::to_string(buffer.size()) + "-byte buffer");
    }
    by_start.push_back(&t);
  }
  std::sort(by_start.begin(), by_start.end(),
            [](const PendingTensor* x, const PendingTensor* y) { return x->start < y->start; });
  for (std::size_t k = 1; k < by_start.size(); ++k) {
    if (by_start[k]->start < by_start[k - 1]->end) {
      throw Error(ErrorKind::kOffsetError,
                  "tensors '" + by_start[k - 1]->record.name + "' and '" + by_start[k]->record.name + "' overlap");
    }
  }

  for (auto& t : pending) {
    decode_values(t.record, buffer.data() + t.start, t.record.element_count());
    file.tensors.push_back(std::move(t.record));
  }
  return file;
}

std::vector<std::uint8_t> write_container(const AdapterFile& file, WritePolicy policy) {
  std::vector<const TensorRecord*> sorted;
  for (const auto& t : file.tensors) sorted.push_back(&t);
  std::sort(sorted.begin(), sorted.end(),
            [](const TensorRecord* a, const TensorRecord* b) { return a->name < b->name; });
  for (std::size_t k = 1; k < sorted.size(); ++k) {
    if (sorted[k]->name == sorted[k - 1]->name) {
      throw Error(ErrorKind::kDuplicateName, "tensor name '" + sorted[k]->name + "' appears twice");
    }
  }

  nlohmann::json header = nlohmann::json::object();
  std::vector<std::uint8_t> payload;
  for (const TensorRecord* t : sorted) {
    if (t->name == kMetadataKey) throw Error(ErrorKind::kDuplicateName, "tensor may not be named __metadata__");
    if (t->element_count() != t->data.size()) {
      throw Error(ErrorKind::kShapeMismatch, "tensor '" + t->name + "' shape does not match its data length");
    }
    DType dtype = DType::kF64;
    switch (policy) {
      case WritePolicy::kF32: dtype = DType::kF32; break;
      case WritePolicy::kF64: dtype = DType::kF64; break;
      case WritePolicy::kAsRecorded: dtype = t->dtype == DType::kF16 ? DType::kF32 : t->dtype; break;
    }
    const std::uint64_t start = payload.size();
    for (double v : t->data) {
      if (dtype == DType::kF64) {
        store_u64(payload, std::bit_cast<std::uint64_t>(v));
      } else {
        store_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
    header[t->name] = {{"dtype", std::string(dtype_name(dtype))},
                       {"shape", t->shape},
                       {"data_offsets", {start, static_cast<std::uint64_t>(payload.size())}}};
  }
  if (!file.metadata.empty()) header[std::string(kMetadataKey)] = file.metadata;

  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(8 + text.size() + payload.size());
  store_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kTruncatedFile, "cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

AdapterFile read_container_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return read_container(bytes);
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                        text.size()));
}

Matrix to_matrix(const TensorRecord& tensor) {
  if (tensor.shape.size() != 2) {
    throw Error(ErrorKind::kShapeMismatch, "tensor '" + tensor.name + "' is not two-dimensional");
  }
  return Matrix(tensor.shape[0], tensor.shape[1], tensor.data);
}

TensorRecord from_matrix(std::string name, const Matrix& m, DType dtype) {
  return TensorRecord{std::move(name), dtype, {m.rows(), m.cols()},
                      std::vector<double>(m.data().begin(), m.data().end())};
}

std::string ModuleKind::label() const {
  switch (cls) {
    case ModuleClass::kQuery: return "query";
    case ModuleClass::kValue: return "value";
    case ModuleClass::kKey: return "key";
    case ModuleClass::kOther: return other_name.empty() ? "other" : other_name;
  }
  return "other";
}

std::string_view to_string(ScaleSource source) {
  switch (source) {
    case ScaleSource::kDefault: return "default";
    case ScaleSource::kMetadata: return "metadata";
    case ScaleSource::kOverride: return "override";
  }
  return "default";
}

std::optional<int> parse_layer_index(std::string_view name) {
  const auto segments = split_segments(name);
  for (std::size_t k = 0; k + 1 < segments.size(); ++k) {
    if (segments[k] != "layer" && segments[k] != "layers") continue;
    const std::string_view digits = segments[k + 1];
    if (digits.empty() || digits.size() > 9) continue;
    int value = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec == std::errc{} && ptr == digits.data() + digits.size() && value >= 0) return value;
  }
  return std::nullopt;
}

ModuleKind parse_module_kind(std::string_view prefix) {
  const auto segments = split_segments(prefix);
  for (auto it = segments.rbegin(); it != segments.rend(); ++it) {
    if (it->find("query") != std::string_view::npos) return {ModuleClass::kQuery, {}};
    if (it->find("value") != std::string_view::npos) return {ModuleClass::kValue, {}};
    if (it->find("key") != std::string_view::npos) return {ModuleClass::kKey, {}};
  }
  std::string_view last = segments.empty() ? std::string_view{} : segments.back();
  return {ModuleClass::kOther, last.empty() ? std::string("other") : std::string(last)};
}

bool unit_order(const std::optional<int>& la, const ModuleKind& ka, const std::string& pa,
                const std::optional<int>& lb, const ModuleKind& kb, const std::string& pb) {
  if (la.has_value() != lb.has_value()) return la.has_value();
  if (la && *la != *lb) return *la < *lb;
  if (ka != kb) return ka < kb;
  return pa < pb;
}

PairingResult pair_lora(const AdapterFile& file, std::optional<double> scale_override) {
  PairingResult result;
  if (scale_override) {
    if (!(*scale_override > 0.0) || !std::isfinite(*scale_override)) {
      throw Error(ErrorKind::kInvalidSpec, "scale override must be a positive finite number");
    }
    result.scale = *scale_override;
    result.scale_source = ScaleSource::kOverride;
  } else {
    const auto alpha = file.metadata.find("alpha");
    const auto rank = file.metadata.find("r");
    double a = 0.0;
    double r = 0.0;
    if (alpha != file.metadata.end() && rank != file.metadata.end() && parse_number(alpha->second, a) &&
        parse_number(rank->second, r) && a > 0.0 && r > 0.0) {
      result.scale = a / r;
      result.scale_source = ScaleSource::kMetadata;
    }
  }

  struct Slot {
    const TensorRecord* a = nullptr;
    const TensorRecord* b = nullptr;
  };
  std::map<std::string, Slot> slots;
  for (const auto& t : file.tensors) {
    const auto factor = factor_of(t.name);
    if (!factor) continue;
    Slot& slot = slots[factor->second];
    const TensorRecord*& target = factor->first == 'A' ? slot.a : slot.b;
    if (target != nullptr) {
      result.orphans.push_back({factor->second, t.name, "duplicate lora_" + std::string(1, factor->first)});
      continue;
    }
    target = &t;
  }

  for (const auto& [prefix, slot] : slots) {
    if (slot.a == nullptr || slot.b == nullptr) {
      const TensorRecord* present = slot.a != nullptr ? slot.a : slot.b;
      result.orphans.push_back(
          {prefix, present->name, slot.a != nullptr ? "missing lora_B" : "missing lora_A"});
      continue;
    }
    Matrix a = to_matrix(*slot.a);
    Matrix b = to_matrix(*slot.b);
    if (a.rows() != b.cols()) {
      throw Error(ErrorKind::kShapeMismatch, "pair '" + prefix + "': lora_A has " + std::to_string(a.rows()) +
                                                 " rows but lora_B has " + std::to_string(b.cols()) + " columns");
    }
    if (a.rows() > std::min(b.rows(), a.cols())) {
      throw Error(ErrorKind::kShapeMismatch, "pair '" + prefix + "': rank exceeds min(m, n)");
    }
    result.pairs.push_back(LoraPair{prefix, std::move(a), std::move(b), parse_layer_index(prefix),
                                    parse_module_kind(prefix), result.scale});
  }
  std::sort(result.pairs.begin(), result.pairs.end(), [](const LoraPair& x, const LoraPair& y) {
    return unit_order(x.layer_index, x.module_kind, x.prefix, y.layer_index, y.module_kind, y.prefix);
  });
  return result;
}

Matrix merge_delta(const LoraPair& pair) {
  Matrix product = matmul(pair.b_matrix, pair.a_matrix);
  for (double& x : product.data()) x *= pair.scale;
  return product;
}

DeltaCollection collect_deltas(const AdapterFile& file, std::optional<double> scale_override) {
  PairingResult pairing = pair_lora(file, scale_override);
  DeltaCollection out;
  out.orphans = std::move(pairing.orphans);
  out.scale = pairing.scale;
  out.scale_source = pairing.scale_source;
  for (const auto& pair : pairing.pairs) {
    out.lora_parameter_count += pair.rank() * (pair.b_matrix.rows() + pair.a_matrix.cols());
    out.units.push_back(
        DeltaUnit{pair.prefix, pair.layer_index, pair.module_kind, pair.scale, true, merge_delta(pair)});
  }

  constexpr std::string_view kSuffix = ".delta_w";
  std::set<std::string> seen;
  for (const auto& u : out.units) seen.insert(u.prefix);
  for (const auto& t : file.tensors) {
    if (t.name.size() <= kSuffix.size() || !t.name.ends_with(kSuffix)) continue;
    if (factor_of(t.name)) continue;
    std::string prefix = t.name.substr(0, t.name.size() - kSuffix.size());
    if (!seen.insert(prefix).second) {
      throw Error(ErrorKind::kDuplicateName, "'" + prefix + "' appears both as a LoRA pair and a dense delta");
    }
    out.units.push_back(DeltaUnit{prefix, parse_layer_index(prefix), parse_module_kind(prefix), 1.0, false,
                                  to_matrix(t)});
  }
  std::sort(out.units.begin(), out.units.end(), [](const DeltaUnit& x, const DeltaUnit& y) {
    return unit_order(x.layer_index, x.module_kind, x.prefix, y.layer_index, y.module_kind, y.prefix);
  });
  return out;
}

}  // namespace lora_spectrum
