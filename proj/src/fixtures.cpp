// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "lora_spectrum/codec.hpp"
#include "lora_spectrum/error.hpp"

namespace lora_spectrum {

namespace {

// Orthonormal DCT-II basis vector of frequency q, length len.
double dct_basis(std::size_t q, std::size_t i, std::size_t len) {
  const double scale = std::sqrt((q == 0 ? 1.0 : 2.0) / static_cast<double>(len));
  return scale * std::cos(std::numbers::pi * static_cast<double>((2 * i + 1) * q) / static_cast<double>(2 * len));
}

std::vector<double> gaussian(NormalStream& rng, std::size_t count, double stddev) {
  std::vector<double> out(count);
  for (double& x : out) x = stddev * rng.next();
  return out;
}

}  // namespace

double NormalStream::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - rng_.uniform53();
  const double u2 = rng_.uniform53();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::string_view to_string(FixtureKind kind) {
  switch (kind) {
    case FixtureKind::kGaussianIid: return "gaussian_iid";
    case FixtureKind::kSmoothLowrank: return "smooth_lowrank";
    case FixtureKind::kMixed: return "mixed";
    case FixtureKind::kDenseGaussian: return "dense_gaussian";
    case FixtureKind::kRankRamp: return "rank_ramp";
  }
  return "smooth_lowrank";
}

FixtureKind parse_fixture_kind(std::string_view text) {
  for (auto kind : {FixtureKind::kGaussianIid, FixtureKind::kSmoothLowrank, FixtureKind::kMixed,
                    FixtureKind::kDenseGaussian, FixtureKind::kRankRamp}) {
    if (to_string(kind) == text) return kind;
  }
  throw Error(ErrorKind::kInvalidSpec, "unknown fixture kind '" + std::string(text) + "'");
}

void validate(const FixtureSpec& spec) {
  if (spec.m == 0 || spec.n == 0) throw Error(ErrorKind::kInvalidSpec, "fixture dimensions must be positive");
  if (spec.r == 0 || spec.r > std::min(spec.m, spec.n)) {
    throw Error(ErrorKind::kInvalidSpec, "fixture rank must lie in [1, min(m, n)]");
  }
  if (!(spec.noise_level >= 0.0) || !std::isfinite(spec.noise_level)) {
    throw Error(ErrorKind::kInvalidSpec, "noise level must be a non-negative finite number");
  }
  if (spec.count == 0) throw Error(ErrorKind::kInvalidSpec, "fixture count must be positive");
  if (spec.modules.empty()) throw Error(ErrorKind::kInvalidSpec, "at least one module name is required");
  std::set<std::string> unique;
  for (const auto& mod : spec.modules) {
    if (mod.empty() || mod.find('.') != std::string::npos || !unique.insert(mod).second) {
      throw Error(ErrorKind::kInvalidSpec, "module names must be unique, non-empty and dot-free");
    }
  }
}

AdapterFile generate(const FixtureSpec& spec) {
  validate(spec);
  const std::size_t m = spec.m;
  const std::size_t n = spec.n;
  NormalStream rng(spec.seed);

  AdapterFile file;
  file.metadata["fixture.kind"] = std::string(to_string(spec.kind));
  file.metadata["fixture.seed"] = std::to_string(spec.seed);
  file.metadata["fixture.shape"] = std::to_string(m) + "," + std::to_string(n);
  file.metadata["fixture.rank"] = std::to_string(spec.r);
  if (spec.kind == FixtureKind::kMixed || spec.kind == FixtureKind::kRankRamp) {
    file.metadata["fixture.noise_level"] = format_double(spec.noise_level);
  }

  for (std::size_t layer = 0; layer < spec.count; ++layer) {
    for (const auto& module : spec.modules) {
      const std::string stem = "layer." + std::to_string(layer) + "." + module;
      if (spec.kind == FixtureKind::kDenseGaussian) {
        file.tensors.push_back(TensorRecord{stem + ".delta_w", DType::kF64, {m, n}, gaussian(rng, m * n, 1.0)});
        continue;
      }

      const std::size_t r = spec.kind == FixtureKind::kRankRamp ? 1 + layer % spec.r : spec.r;
      std::vector<double> a(r * n);
      std::vector<double> b(m * r);
      if (spec.kind == FixtureKind::kGaussianIid) {
        const double stddev = 1.0 / std::sqrt(static_cast<double>(r));
        a = gaussian(rng, r * n, stddev);
        b = gaussian(rng, m * r, stddev);
      } else {
        for (std::size_t q = 0; q < r; ++q)
          for (std::size_t j = 0; j < n; ++j) a[q * n + j] = dct_basis(q, j, n);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t q = 0; q < r; ++q) b[i * r + q] = dct_basis(q, i, m);
        if (spec.kind != FixtureKind::kSmoothLowrank) {
          // Basis entries have RMS 1/sqrt(len); noise_level is relative to that.
          const auto na = gaussian(rng, r * n, spec.noise_level / std::sqrt(static_cast<double>(n)));
          const auto nb = gaussian(rng, m * r, spec.noise_level / std::sqrt(static_cast<double>(m)));
          for (std::size_t k = 0; k < a.size(); ++k) a[k] += na[k];
          for (std::size_t k = 0; k < b.size(); ++k) b[k] += nb[k];
        }
      }
      file.tensors.push_back(TensorRecord{stem + ".lora_A.weight", DType::kF64, {r, n}, std::move(a)});
      file.tensors.push_back(TensorRecord{stem + ".lora_B.weight", DType::kF64, {m, r}, std::move(b)});
    }
  }
  return file;
}

}  // namespace lora_spectrum
