// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit suites. The oracles here are deliberately naive
// and share no code with the library.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "lora_spectrum/fixtures.hpp"
#include "lora_spectrum/linalg.hpp"

namespace test_support {

using lora_spectrum::Matrix;

inline Matrix random_matrix(lora_spectrum::NormalStream& rng, std::size_t m, std::size_t n) {
  std::vector<double> v(m * n);
  for (double& x : v) x = rng.next();
  return Matrix(m, n, std::move(v));
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      long double acc = 0.0L;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
      out(i, j) = static_cast<double>(acc);
    }
  return out;
}

// Direct O(m^2 n^2) evaluation of the orthonormal 2D DCT-II in long double.
inline Matrix naive_dct2(const Matrix& x) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  const long double pi = std::numbers::pi_v<long double>;
  Matrix out(m, n);
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      long double acc = 0.0L;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          acc += x(i, j) * std::cos(pi * (2 * i + 1) * u / (2.0L * m)) * std::cos(pi * (2 * j + 1) * v / (2.0L * n));
      const long double au = std::sqrt((u == 0 ? 1.0L : 2.0L) / m);
      const long double av = std::sqrt((v == 0 ? 1.0L : 2.0L) / n);
      out(u, v) = static_cast<double>(au * av * acc);
    }
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]));
  return worst;
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

inline std::vector<std::uint8_t> assemble(const std::string& header, const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> out;
  put_u64(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("lora_spectrum_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace test_support
