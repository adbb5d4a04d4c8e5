// SPDX-License-Identifier: Apache-2.0
#include "lora_spectrum/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "lora_spectrum/error.hpp"

namespace lora_spectrum {

namespace {

// Continued fraction for I_x(a, b), modified Lentz. Converges quickly for
// x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw Error(ErrorKind::kNoConvergence, "incomplete beta continued fraction did not converge");
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::kDegenerateInput, "series lengths differ");
  const std::size_t n = x.size();
  if (n < 3) throw Error(ErrorKind::kDegenerateInput, "pearson needs at least 3 samples, got " + std::to_string(n));
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::kDegenerateInput, "a series has zero variance");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::kDegenerateInput, "series lengths differ");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0) || !(x >= 0.0 && x <= 1.0)) {
    throw Error(ErrorKind::kDegenerateInput, "incomplete beta arguments out of domain");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw Error(ErrorKind::kDegenerateInput, "degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

double pearson_p_two_sided(double r, std::size_t n) {
  if (n < 4) throw Error(ErrorKind::kDegenerateInput, "p-value needs n >= 4, got " + std::to_string(n));
  if (!(std::abs(r) <= 1.0)) throw Error(ErrorKind::kDegenerateInput, "correlation outside [-1, 1]");
  if (std::abs(r) == 1.0) return 0.0;
  const double dof = static_cast<double>(n - 2);
  // 2 (1 - CDF_t(|t|)) equals I_{dof / (dof + t^2)}(dof / 2, 1 / 2), and
  // dof / (dof + t^2) simplifies to 1 - r^2; this form keeps tail precision.
  const double x = (1.0 - r) * (1.0 + r);
  return std::clamp(regularized_incomplete_beta(0.5 * dof, 0.5, x), 0.0, 1.0);
}

CorrelationResult svd_dct_correlate(std::span<const std::pair<double, double>> pairs) {
  if (pairs.size() < 4) {
    throw Error(ErrorKind::kDegenerateInput, "correlation needs at least 4 matrices, got " + std::to_string(pairs.size()));
  }
  std::vector<double> svd_k90;
  std::vector<double> dct_k90;
  for (const auto& [s, d] : pairs) {
    svd_k90.push_back(s);
    dct_k90.push_back(d);
  }
  CorrelationResult out;
  out.n = pairs.size();
  out.pearson_r = pearson(svd_k90, dct_k90);
  out.spearman_rho = spearman(svd_k90, dct_k90);
  out.p_value_pearson = pearson_p_two_sided(out.pearson_r, out.n);
  return out;
}

}  // namespace lora_spectrum
