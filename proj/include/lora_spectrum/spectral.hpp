// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lora_spectrum/dct.hpp"
#include "lora_spectrum/linalg.hpp"

namespace lora_spectrum {

/// Squared coefficient magnitudes sorted descending with their running
/// fraction of the total. An all-zero spectrum carries zero_spectrum = true
/// and an empty cumulative_fraction.
struct EnergyCurve {
  std::vector<double> sorted_energies;
  std::vector<double> cumulative_fraction;
  double total_energy = 0.0;
  bool zero_spectrum = false;
};

struct SpectralSummary {
  double k90_percent = 0.0;
  std::size_t coeff_count_90 = 0;
  double total_energy = 0.0;
  std::optional<int> layer_index;
  std::string module_kind;
};

struct MaskResult {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> retained_flat_indices;  // ascending
  std::vector<double> retained_values;
  double retained_energy_fraction = 0.0;
  double k_percent_requested = 0.0;
  std::size_t k_count = 0;
};

EnergyCurve energy_curve(const Spectrum& f);
EnergyCurve energy_curve(std::vector<double> energies);

/// Smallest c with cumulative_fraction[c - 1] >= target_fraction.
/// Throws ZeroSpectrum for an all-zero curve.
SpectralSummary k_for_energy(const EnergyCurve& curve, double target_fraction = 0.9);

/// max(1, ceil(k_percent * count / 100)), clamped to count.
std::size_t k_count_for(double k_percent, std::size_t count);

/// Keeps the k_count coefficients of largest |F|; equal magnitudes go to the
/// lower row-major flat index. Throws InvalidSpec for k outside (0, 100].
MaskResult topk_mask(const Spectrum& f, double k_percent);

/// idct2 of the spectrum with every non-retained coefficient zeroed.
Matrix reconstruct(const Spectrum& f, const MaskResult& mask);

/// idct2 of the dropped coefficients only, i.e. delta - reconstruct(f, mask).
Matrix residual(const Spectrum& f, const MaskResult& mask);

struct SweepPoint {
  double k_percent = 0.0;
  double relative_error = 0.0;
  double retained_energy_fraction = 0.0;
  std::size_t k_count = 0;
};

/// One forward transform, then per-k masking. relative_error is
/// ||residual||_F / ||delta||_F. Throws ZeroSpectrum for a zero delta.
std::vector<SweepPoint> sweep(const Matrix& delta, const std::vector<double>& k_values);

/// Percentage of singular values (of min(m, n)) needed to reach the target
/// share of sum s_i^2.
struct SvdConcentration {
  double k90_percent = 0.0;
  std::size_t count = 0;
};
SvdConcentration svd_energy_k90(const std::vector<double>& singular_values, double target_fraction = 0.9);

struct HeatmapCell {
  double mean_k90 = 0.0;
  std::size_t count = 0;
};

/// Rows keyed by layer index (std::nullopt = the "unindexed" row, listed last);
/// columns are module labels. Absent cells are std::nullopt.
struct LayerHeatmap {
  std::vector<std::optional<int>> layers;
  std::vector<std::string> modules;
  std::vector<std::vector<std::optional<HeatmapCell>>> cells;  // [layer][module]
};

LayerHeatmap layer_heatmap(const std::vector<SpectralSummary>& summaries);

}  // namespace lora_spectrum
