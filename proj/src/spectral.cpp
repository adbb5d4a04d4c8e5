// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "lora_spectrum/error.hpp"

namespace lora_spectrum {

namespace {

void check_k(double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw Error(ErrorKind::kInvalidSpec, "k must lie in (0, 100], got " + std::to_string(k_percent));
  }
}

// Flat indices ordered by |F| descending, ties to the lower index. Prefixes
// of this order are exactly the top-k sets, so they nest across k.
std::vector<std::uint32_t> magnitude_order(const Spectrum& f) {
  const auto values = f.coefficients.data();
  if (values.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorKind::kShapeMismatch, "spectrum too large for 32-bit flat indices");
  }
  std::vector<std::uint32_t> order(values.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double ma = std::abs(values[a]);
    const double mb = std::abs(values[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  });
  return order;
}

struct RankedSpectrum {
  std::vector<std::uint32_t> order;
  std::vector<double> prefix;  // prefix[c - 1] = energy of the first c coefficients in order
  double total = 0.0;
};

RankedSpectrum rank_spectrum(const Spectrum& f) {
  RankedSpectrum r;
  r.order = magnitude_order(f);
  r.prefix.resize(r.order.size());
  const auto values = f.coefficients.data();
  double running = 0.0;
  for (std::size_t k = 0; k < r.order.size(); ++k) {
    const double v = values[r.order[k]];
    running += v * v;
    r.prefix[k] = running;
  }
  r.total = running;
  return r;
}

MaskResult mask_from_ranking(const Spectrum& f, const RankedSpectrum& ranked, double k_percent) {
  MaskResult mask;
  mask.rows = f.rows();
  mask.cols = f.cols();
  mask.k_percent_requested = k_percent;
  mask.k_count = k_count_for(k_percent, ranked.order.size());
  mask.retained_flat_indices.assign(ranked.order.begin(),
                                    ranked.order.begin() + static_cast<std::ptrdiff_t>(mask.k_count));
  std::sort(mask.retained_flat_indices.begin(), mask.retained_flat_indices.end());
  const auto values = f.coefficients.data();
  mask.retained_values.reserve(mask.k_count);
  for (std::uint32_t idx : mask.retained_flat_indices) mask.retained_values.push_back(values[idx]);
  // A zero spectrum loses nothing under any mask.
  mask.retained_energy_fraction = ranked.total > 0.0 ? ranked.prefix[mask.k_count - 1] / ranked.total : 1.0;
  return mask;
}

void check_mask_shape(const Spectrum& f, const MaskResult& mask) {
  if (mask.rows != f.rows() || mask.cols != f.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "mask shape does not match spectrum");
  }
  const std::size_t n = f.coefficients.size();
  for (std::uint32_t idx : mask.retained_flat_indices) {
    if (idx >= n) throw Error(ErrorKind::kShapeMismatch, "mask index out of range");
  }
}

}  // namespace

EnergyCurve energy_curve(const Spectrum& f) {
  std::vector<double> energies;
  energies.reserve(f.coefficients.size());
  for (double v : f.coefficients.data()) energies.push_back(v * v);
  return energy_curve(std::move(energies));
}

EnergyCurve energy_curve(std::vector<double> energies) {
  EnergyCurve curve;
  std::sort(energies.begin(), energies.end(), std::greater<>());
  curve.sorted_energies = std::move(energies);
  double running = 0.0;
  std::vector<double> prefix(curve.sorted_energies.size());
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    running += curve.sorted_energies[k];
    prefix[k] = running;
  }
  curve.total_energy = running;
  if (running == 0.0) {
    curve.zero_spectrum = true;
    return curve;
  }
  curve.cumulative_fraction.resize(prefix.size());
  for (std::size_t k = 0; k < prefix.size(); ++k) curve.cumulative_fraction[k] = prefix[k] / running;
  return curve;
}

SpectralSummary k_for_energy(const EnergyCurve& curve, double target_fraction) {
  if (!(target_fraction > 0.0 && target_fraction <= 1.0)) {
    throw Error(ErrorKind::kInvalidSpec, "energy target must lie in (0, 1]");
  }
  if (curve.zero_spectrum || curve.total_energy <= 0.0 || curve.cumulative_fraction.empty()) {
    throw Error(ErrorKind::kZeroSpectrum, "spectrum carries no energy");
  }
  const auto& frac = curve.cumulative_fraction;
  const auto it = std::lower_bound(frac.begin(), frac.end(), target_fraction);
  // The last fraction is exactly 1, so the search always lands in range.
  const std::size_t count = it == frac.end() ? frac.size() : static_cast<std::size_t>(it - frac.begin()) + 1;
  SpectralSummary s;
  s.coeff_count_90 = count;
  s.k90_percent = 100.0 * static_cast<double>(count) / static_cast<double>(frac.size());
  s.total_energy = curve.total_energy;
  return s;
}

std::size_t k_count_for(double k_percent, std::size_t count) {
  check_k(k_percent);
  const double exact = k_percent * static_cast<double>(count) / 100.0;
  const double nearest = std::round(exact);
  // Products like 20% of 4095 should not round up over representation noise.
  const double wanted = std::abs(exact - nearest) <= 1e-12 * std::max(1.0, exact) ? nearest : std::ceil(exact);
  const auto c = static_cast<std::size_t>(wanted);
  return std::clamp<std::size_t>(c, 1, count);
}

MaskResult topk_mask(const Spectrum& f, double k_percent) {
  check_k(k_percent);
  return mask_from_ranking(f, rank_spectrum(f), k_percent);
}

Matrix reconstruct(const Spectrum& f, const MaskResult& mask) {
  check_mask_shape(f, mask);
  Spectrum kept{Matrix(f.rows(), f.cols())};
  const auto src = f.coefficients.data();
  auto dst = kept.coefficients.data();
  for (std::uint32_t idx : mask.retained_flat_indices) dst[idx] = src[idx];
  return idct2(kept);
}

Matrix residual(const Spectrum& f, const MaskResult& mask) {
  check_mask_shape(f, mask);
  Spectrum dropped = f;
  auto dst = dropped.coefficients.data();
  for (std::uint32_t idx : mask.retained_flat_indices) dst[idx] = 0.0;
  return idct2(dropped);
}

std::vector<SweepPoint> sweep(const Matrix& delta, const std::vector<double>& k_values) {
  for (double k : k_values) check_k(k);
  const double norm = frobenius_norm(delta);
  if (norm == 0.0) throw Error(ErrorKind::kZeroSpectrum, "weight update is identically zero");

  const Spectrum f = dct2(delta);
  const RankedSpectrum ranked = rank_spectrum(f);
  std::vector<SweepPoint> out;
  out.reserve(k_values.size());
  for (double k : k_values) {
    const MaskResult mask = mask_from_ranking(f, ranked, k);
    const Matrix dropped = residual(f, mask);
    out.push_back(SweepPoint{k, frobenius_norm(dropped) / norm, mask.retained_energy_fraction, mask.k_count});
  }
  return out;
}

SvdConcentration svd_energy_k90(const std::vector<double>& singular_values, double target_fraction) {
  std::vector<double> energies;
  energies.reserve(singular_values.size());
  for (double s : singular_values) energies.push_back(s * s);
  const EnergyCurve curve = energy_curve(std::move(energies));
  const SpectralSummary s = k_for_energy(curve, target_fraction);
  return SvdConcentration{s.k90_percent, s.coeff_count_90};
}

LayerHeatmap layer_heatmap(const std::vector<SpectralSummary>& summaries) {
  auto module_rank = [](const std::string& label) {
    if (label == "query") return 0;
    if (label == "value") return 1;
    if (label == "key") return 2;
    return 3;
  };
  auto module_less = [&](const std::string& a, const std::string& b) {
    const int ra = module_rank(a);
    const int rb = module_rank(b);
    return ra != rb ? ra < rb : a < b;
  };

  std::set<int> indexed;
  bool has_unindexed = false;
  std::vector<std::string> modules;
  for (const auto& s : summaries) {
    if (s.layer_index) {
      indexed.insert(*s.layer_index);
    } else {
      has_unindexed = true;
    }
    if (std::find(modules.begin(), modules.end(), s.module_kind) == modules.end()) modules.push_back(s.module_kind);
  }
  std::sort(modules.begin(), modules.end(), module_less);

  LayerHeatmap map;
  map.modules = modules;
  for (int layer : indexed) map.layers.emplace_back(layer);
  if (has_unindexed) map.layers.emplace_back(std::nullopt);

  std::vector<std::vector<double>> sums(map.layers.size(), std::vector<double>(modules.size(), 0.0));
  std::vector<std::vector<std::size_t>> counts(map.layers.size(), std::vector<std::size_t>(modules.size(), 0));
  for (const auto& s : summaries) {
    const auto row = static_cast<std::size_t>(std::find(map.layers.begin(), map.layers.end(), s.layer_index) -
                                              map.layers.begin());
    const auto col = static_cast<std::size_t>(std::find(modules.begin(), modules.end(), s.module_kind) -
                                              modules.begin());
    sums[row][col] += s.k90_percent;
    counts[row][col] += 1;
  }
  map.cells.assign(map.layers.size(), std::vector<std::optional<HeatmapCell>>(modules.size()));
  for (std::size_t r = 0; r < map.layers.size(); ++r) {
    for (std::size_t c = 0; c < modules.size(); ++c) {
      if (counts[r][c] > 0) {
        map.cells[r][c] = HeatmapCell{sums[r][c] / static_cast<double>(counts[r][c]), counts[r][c]};
      }
    }
  }
  return map;
}

}  // namespace lora_spectrum
