// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/dct.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <new>
#include <numbers>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

namespace lora_spectrum {

namespace {

// Fast path: FFTW's REDFT10 (DCT-II) and REDFT01 (DCT-III) in 2D, rescaled to
// the orthonormal convention. Plans are cached per shape; the FFTW planner is
// not thread-safe but fftw_execute_r2r on fresh buffers is.
enum class Direction { kForward, kInverse };

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : ptr(fftw_alloc_real(n)) {
    if (ptr == nullptr) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  double* ptr;
};

class PlanCache {
 public:
  fftw_plan get(std::size_t rows, std::size_t cols, Direction dir) {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto key = std::make_tuple(rows, cols, dir);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    FftwBuffer in(rows * cols);
    FftwBuffer out(rows * cols);
    const fftw_r2r_kind kind = dir == Direction::kForward ? FFTW_REDFT10 : FFTW_REDFT01;
    fftw_plan plan = fftw_plan_r2r_2d(static_cast<int>(rows), static_cast<int>(cols), in.ptr,
                                      out.ptr, kind, kind, FFTW_ESTIMATE);
    if (plan == nullptr) throw std::runtime_error("FFTW failed to create a DCT plan");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<std::tuple<std::size_t, std::size_t, Direction>, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

// Orthonormal scale for frequency k of an N-point transform.
double ortho(std::size_t k, std::size_t n) {
  return std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
}

std::vector<double> axis_scales(std::size_t n) {
  std::vector<double> s(n);
  for (std::size_t k = 0; k < n; ++k) s[k] = ortho(k, n);
  return s;
}

// cos(pi (2i+1) k / 2N) for all k, i with the argument reduced mod 4N first.
std::vector<double> cosine_table(std::size_t n) {
  std::vector<double> table(n * n);
  const std::size_t period = 4 * n;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t phase = ((2 * i + 1) * k) % period;
      table[k * n + i] =
          std::cos(std::numbers::pi * static_cast<double>(phase) / static_cast<double>(2 * n));
    }
  }
  return table;
}

}  // namespace

Spectrum dct2(const Matrix& x) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  fftw_plan plan = plan_cache().get(m, n, Direction::kForward);
  FftwBuffer in(m * n);
  FftwBuffer out(m * n);
  std::copy(x.data().begin(), x.data().end(), in.ptr);
  fftw_execute_r2r(plan, in.ptr, out.ptr);

  // REDFT10 yields 2 sum x cos(...) per axis.
  const auto sm = axis_scales(m);
  const auto sn = axis_scales(n);
  std::vector<double> coeffs(m * n);
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t v = 0; v < n; ++v) coeffs[u * n + v] = out.ptr[u * n + v] * (0.25 * sm[u] * sn[v]);
  return Spectrum{Matrix(m, n, std::move(coeffs))};
}

Matrix idct2(const Spectrum& f) {
  const std::size_t m = f.rows();
  const std::size_t n = f.cols();
  fftw_plan plan = plan_cache().get(m, n, Direction::kInverse);
  FftwBuffer in(m * n);
  FftwBuffer out(m * n);

  // REDFT01 computes X_0 + 2 sum_{k>0} X_k cos(...) per axis, so halve the
  // non-DC weights after applying the orthonormal factors.
  auto weights = [](std::size_t len) {
    std::vector<double> w = axis_scales(len);
    for (std::size_t k = 1; k < len; ++k) w[k] *= 0.5;
    return w;
  };
  const auto wm = weights(m);
  const auto wn = weights(n);
  const auto src = f.coefficients.data();
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t v = 0; v < n; ++v) in.ptr[u * n + v] = src[u * n + v] * (wm[u] * wn[v]);
  fftw_execute_r2r(plan, in.ptr, out.ptr);
  return Matrix(m, n, std::vector<double>(out.ptr, out.ptr + m * n));
}

Spectrum dct2_reference(const Matrix& x) {
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  const auto cm = cosine_table(m);
  const auto cn = cosine_table(n);

  // Along rows: t[i, v] = a_n(v) sum_j x[i, j] cos(pi (2j+1) v / 2n).
  std::vector<double> t(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t v = 0; v < n; ++v) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += x(i, j) * cn[v * n + j];
      t[i * n + v] = ortho(v, n) * acc;
    }
  }
  // Along columns: F[u, v] = a_m(u) sum_i t[i, v] cos(pi (2i+1) u / 2m).
  std::vector<double> f(m * n, 0.0);
  for (std::size_t u = 0; u < m; ++u) {
    double* acc = &f[u * n];
    for (std::size_t i = 0; i < m; ++i) {
      const double c = cm[u * m + i];
      const double* ti = &t[i * n];
      for (std::size_t v = 0; v < n; ++v) acc[v] += ti[v] * c;
    }
    const double scale = ortho(u, m);
    for (std::size_t v = 0; v < n; ++v) acc[v] *= scale;
  }
  return Spectrum{Matrix(m, n, std::move(f))};
}

}  // namespace lora_spectrum
