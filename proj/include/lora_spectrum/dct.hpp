// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

#include "lora_spectrum/linalg.hpp"

namespace lora_spectrum {

/// 2D DCT-II coefficients of an m x n matrix under orthonormal scaling.
/// coefficients(u, v) pairs row frequency u with column frequency v; a larger
/// index means a higher frequency along that axis.
struct Spectrum {
  Matrix coefficients;

  std::size_t rows() const noexcept { return coefficients.rows(); }
  std::size_t cols() const noexcept { return coefficients.cols(); }
};

/// Orthonormal 2D DCT-II:
///   F[u,v] = a_m(u) a_n(v) sum_{i,j} x[i,j] cos(pi (2i+1) u / 2m) cos(pi (2j+1) v / 2n)
/// with a_N(0) = sqrt(1/N) and a_N(k>0) = sqrt(2/N). Arbitrary sizes are supported.
Spectrum dct2(const Matrix& x);

/// Orthonormal 2D DCT-III, the exact inverse of dct2.
Matrix idct2(const Spectrum& f);

/// Definitional evaluation of the same transform, one direct cosine sum per
/// output coefficient along each axis. O(m^2 n + m n^2); used as a test oracle.
Spectrum dct2_reference(const Matrix& x);

}  // namespace lora_spectrum
