// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lora_spectrum/error.hpp"
#include "lora_spectrum/fixtures.hpp"

namespace lora_spectrum::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";

namespace exit_code {
inline constexpr int kSuccess = 0;
inline constexpr int kUsage = 1;
inline constexpr int kParse = 2;
inline constexpr int kNoPairs = 3;
inline constexpr int kZeroSpectrum = 4;
inline constexpr int kCorruptSparse = 5;
inline constexpr int kDegenerateStats = 6;
}  // namespace exit_code

/// Failure carrying the process exit status it should produce.
class CommandFailure : public std::runtime_error {
 public:
  CommandFailure(int code, const std::string& message) : std::runtime_error(message), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

int exit_code_for(ErrorKind kind);

struct AnalyzeOptions {
  std::filesystem::path input;
  std::filesystem::path out_dir;
  double energy_target = 0.9;
  std::size_t curve_points = 1000;  // 0 keeps every coefficient rank
  std::size_t threads = 0;          // 0 = logical cores
  std::optional<double> scale;
};

/// Writes report.json, heatmap.csv, curves.csv and curves/<prefix>.csv under
/// out_dir. Returns the report.
nlohmann::json run_analyze(const AnalyzeOptions& options);

enum class EmitMode { kSparse, kDense };

struct MaskOptions {
  std::filesystem::path input;
  std::filesystem::path out;
  double k_percent = 10.0;
  EmitMode emit = EmitMode::kSparse;
  std::optional<std::uint64_t> base_params;
  std::size_t threads = 0;
  std::optional<double> scale;
};

/// Writes the compressed container; prints storage accounting to `report`.
void run_mask(const MaskOptions& options, std::ostream& report);

struct DecompressOptions {
  std::filesystem::path input;
  std::filesystem::path out;
  std::size_t threads = 0;
};

void run_decompress(const DecompressOptions& options);

struct SweepOptions {
  std::filesystem::path input;
  std::filesystem::path out;
  std::vector<double> k_values;
  std::size_t threads = 0;
  std::optional<double> scale;
};

/// Parses "5,10,20"; throws CommandFailure(kUsage) on bad or out-of-range values.
std::vector<double> parse_k_list(std::string_view text);

void run_sweep(const SweepOptions& options);

struct CorrelateOptions {
  std::filesystem::path input;
  std::filesystem::path out;
  double energy_target = 0.9;
  std::size_t threads = 0;
  std::optional<double> scale;
};

nlohmann::json run_correlate(const CorrelateOptions& options);

struct SynthOptions {
  FixtureSpec spec;
  std::filesystem::path out;
  bool f32 = false;
};

void run_synth(const SynthOptions& options);

/// Filesystem-safe stem for per-matrix output files.
std::string sanitize_prefix(std::string_view prefix);

}  // namespace lora_spectrum::cli
