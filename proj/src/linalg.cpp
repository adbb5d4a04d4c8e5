// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/linalg.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <numeric>
#include <string>

#include "lora_spectrum/error.hpp"

namespace lora_spectrum {

namespace {

void check_dims(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw Error(ErrorKind::kShapeMismatch, "matrix dimensions must be positive, got " +
                                               std::to_string(rows) + "x" + std::to_string(cols));
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += x[k] * y[k];
  return acc;
}

void rotate(double* x, double* y, std::size_t n, double c, double s) {
  for (std::size_t k = 0; k < n; ++k) {
    const double xi = x[k];
    const double yi = y[k];
    x[k] = c * xi - s * yi;
    y[k] = s * xi + c * yi;
  }
}

// Columns of a tall (m >= n) matrix stored contiguously: cols[j * m + i] = a(i, j).
struct JacobiOutput {
  std::vector<double> columns;  // n columns of length m, mutually orthogonal on exit
  std::vector<double> v;        // n columns of length n
  int sweeps = 0;
  double residual = 0.0;
};

JacobiOutput hestenes(const Matrix& a, const SvdOptions& options) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  JacobiOutput out;
  out.columns.resize(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.columns[j * m + i] = a(i, j);
  out.v.assign(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) out.v[j * n + j] = 1.0;

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* cj = &out.columns[j * m];
    norms[j] = dot(cj, cj, m);
  }

  // Columns whose squared norm falls under this floor hold only rounding
  // residue; rotating them against each other cannot change any singular
  // value above the floor.
  const double total = std::accumulate(norms.begin(), norms.end(), 0.0);
  const double floor_norm = static_cast<double>(std::max(m, n)) * DBL_EPSILON * std::sqrt(total);
  const double negligible = floor_norm * floor_norm;

  for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
    double worst = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double alpha = norms[i];
        const double beta = norms[j];
        if (alpha <= negligible || beta <= negligible) continue;
        double* ci = &out.columns[i * m];
        double* cj = &out.columns[j * m];
        const double gamma = dot(ci, cj, m);
        const double measure = std::abs(gamma) / std::sqrt(alpha * beta);
        worst = std::max(worst, measure);
        if (measure <= options.rotation_tolerance) continue;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(ci, cj, m, c, s);
        rotate(&out.v[i * n], &out.v[j * n], n, c, s);
        norms[i] = dot(ci, ci, m);
        norms[j] = dot(cj, cj, m);
      }
    }
    out.sweeps = sweep;
    out.residual = worst;
    if (worst <= options.rotation_tolerance) return out;
  }
  if (out.residual > options.accept_residual) {
    throw Error(ErrorKind::kNoConvergence,
                "Jacobi SVD hit " + std::to_string(options.max_sweeps) +
                    " sweeps with residual " + std::to_string(out.residual));
  }
  return out;
}

// Gram-Schmidt against the accepted vectors, applied twice. Rejects u when
// almost nothing survives, since its direction is then mostly rounding.
bool orthogonalize(std::vector<double>& u, const std::vector<std::vector<double>>& basis) {
  const double before = std::sqrt(dot(u.data(), u.data(), u.size()));
  if (before == 0.0) return false;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) {
      const double proj = dot(u.data(), b.data(), u.size());
      for (std::size_t k = 0; k < u.size(); ++k) u[k] -= proj * b[k];
    }
  }
  const double after = std::sqrt(dot(u.data(), u.data(), u.size()));
  if (after < 1e-3 * before) return false;
  for (double& x : u) x /= after;
  return true;
}

SvdResult svd_tall(const Matrix& a, const SvdOptions& options) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  JacobiOutput jac = hestenes(a, options);

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double* cj = &jac.columns[j * m];
    sigma[j] = std::sqrt(dot(cj, cj, m));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double total = std::sqrt(std::accumulate(sigma.begin(), sigma.end(), 0.0,
                                                 [](double acc, double s) { return acc + s * s; }));
  const double floor_norm = static_cast<double>(std::max(m, n)) * DBL_EPSILON * total;

  SvdResult result{std::vector<double>(n), Matrix(m, n), Matrix(n, n), jac.sweeps, jac.residual};
  std::vector<std::vector<double>> basis;
  basis.reserve(n);
  std::size_t next_unit = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    const double s = sigma[j];
    result.singular_values[k] = s;

    std::vector<double> u(jac.columns.begin() + static_cast<std::ptrdiff_t>(j * m),
                          jac.columns.begin() + static_cast<std::ptrdiff_t>((j + 1) * m));
    bool ok = false;
    if (s > floor_norm) {
      for (double& x : u) x /= s;
      ok = true;
    } else {
      // Null-space direction: complete the basis instead of normalizing noise.
      ok = orthogonalize(u, basis);
      while (!ok && next_unit < m) {
        std::fill(u.begin(), u.end(), 0.0);
        u[next_unit++] = 1.0;
        ok = orthogonalize(u, basis);
      }
    }
    if (!ok) throw Error(ErrorKind::kNoConvergence, "could not complete left singular basis");

    const auto peak = std::max_element(u.begin(), u.end(),
                                       [](double x, double y) { return std::abs(x) < std::abs(y); });
    const double sign = (*peak < 0.0) ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m; ++i) result.left_vectors(i, k) = sign * u[i];
    for (std::size_t i = 0; i < n; ++i) result.right_vectors_t(k, i) = sign * jac.v[j * n + i];
    for (double& x : u) x *= sign;
    basis.push_back(std::move(u));
  }
  return result;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  check_dims(rows, cols);
  data_.assign(rows * cols, 0.0);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  check_dims(rows, cols);
  if (data_.size() != rows * cols) {
    throw Error(ErrorKind::kShapeMismatch, "matrix data length " + std::to_string(data_.size()) +
                                               " does not match " + std::to_string(rows) + "x" +
                                               std::to_string(cols));
  }
  for (double x : data_) {
    if (!std::isfinite(x)) throw Error(ErrorKind::kNonFinite, "matrix entry is not finite");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

Matrix Matrix::transposed() const {
  Matrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

Matrix Matrix::scaled(double factor) const {
  std::vector<double> values(data_);
  for (double& x : values) x *= factor;
  return Matrix(rows_, cols_, std::move(values));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorKind::kShapeMismatch,
                "matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " by " +
                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  // i-k-j loop: out(i, j) accumulates a(i, 0) b(0, j), a(i, 1) b(1, j), ... in order.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

double frobenius_norm(const Matrix& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x * x;
  return std::sqrt(acc);
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "subtract requires equal shapes");
  }
  std::vector<double> values(a.size());
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = a.data()[k] - b.data()[k];
  return Matrix(a.rows(), a.cols(), std::move(values));
}

double relative_frobenius_error(const Matrix& a, const Matrix& b) {
  const double diff = frobenius_norm(subtract(a, b));
  const double ref = frobenius_norm(b);
  return ref > 0.0 ? diff / ref : diff;
}

SvdResult svd(const Matrix& a, const SvdOptions& options) {
  if (a.rows() >= a.cols()) return svd_tall(a, options);

  // Wide input: decompose the transpose and swap the factors.
  SvdResult t = svd_tall(a.transposed(), options);
  const std::size_t p = t.singular_values.size();
  SvdResult out{std::move(t.singular_values), t.right_vectors_t.transposed(),
                t.left_vectors.transposed(), t.sweeps, t.residual};
  for (std::size_t k = 0; k < p; ++k) {
    double peak = 0.0;
    for (std::size_t i = 0; i < out.left_vectors.rows(); ++i) {
      const double x = out.left_vectors(i, k);
      if (std::abs(x) > std::abs(peak)) peak = x;
    }
    if (peak < 0.0) {
      for (std::size_t i = 0; i < out.left_vectors.rows(); ++i) out.left_vectors(i, k) *= -1.0;
      for (std::size_t i = 0; i < out.right_vectors_t.cols(); ++i) out.right_vectors_t(k, i) *= -1.0;
    }
  }
  return out;
}

}  // namespace lora_spectrum
