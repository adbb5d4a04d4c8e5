// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lora_spectrum/container.hpp"

namespace lora_spectrum {

/// SplitMix64 (Steele, Lea, Flood). Bit-identical on every platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Top 53 bits scaled into [0, 1).
  double uniform53() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Box-Muller standard normals. Each pair consumes two 53-bit uniforms; the
/// first uniform is mapped to (0, 1] so the logarithm stays finite.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}

  double next();

 private:
  SplitMix64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// rank_ramp: the mixed construction with rank 1 + (i mod r) in layer i, so SVD
// and DCT concentration rise together across layers.
enum class FixtureKind { kGaussianIid, kSmoothLowrank, kMixed, kDenseGaussian, kRankRamp };

std::string_view to_string(FixtureKind kind);
FixtureKind parse_fixture_kind(std::string_view text);  // throws InvalidSpec

struct FixtureSpec {
  FixtureKind kind = FixtureKind::kSmoothLowrank;
  std::size_t m = 64;
  std::size_t n = 64;
  std::size_t r = 8;
  std::uint64_t seed = 42;
  double noise_level = 0.0;  // mixed and rank_ramp: perturbation relative to the factor scale
  std::size_t count = 1;     // layers 0 .. count-1
  std::vector<std::string> modules = {"query"};
};

/// Throws InvalidSpec for zero dimensions, r > min(m, n), negative noise,
/// count == 0 or an empty / duplicated module list.
void validate(const FixtureSpec& spec);

/// Deterministic container: "layer.<i>.<module>.lora_A.weight" (r x n) and
/// ".lora_B.weight" (m x r) for the factor kinds, "layer.<i>.<module>.delta_w"
/// (m x n) for dense_gaussian. One normal stream per call, consumed layer by
/// layer, module by module, A before B, row-major.
AdapterFile generate(const FixtureSpec& spec);

}  // namespace lora_spectrum
