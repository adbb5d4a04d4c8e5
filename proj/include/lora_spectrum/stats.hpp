// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace lora_spectrum {

struct CorrelationResult {
  double pearson_r = 0.0;
  double spearman_rho = 0.0;
  std::size_t n = 0;
  double p_value_pearson = 1.0;
};

/// Two-pass (mean-subtracted) sample correlation. Throws DegenerateInput for
/// unequal lengths, n < 3 or a constant series.
double pearson(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; tied values share the average of the ranks they span.
std::vector<double> average_ranks(std::span<const double> x);

double spearman(std::span<const double> x, std::span<const double> y);

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

/// Student-t CDF with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

/// Two-sided p-value of a Pearson r under H0 using the exact t distribution
/// with n - 2 degrees of freedom. |r| == 1 gives 0. Throws DegenerateInput
/// for n < 4 or |r| > 1.
double pearson_p_two_sided(double r, std::size_t n);

/// pairs = (svd_k90, dct_k90) per matrix. Needs n >= 4.
CorrelationResult svd_dct_correlate(std::span<const std::pair<double, double>> pairs);

}  // namespace lora_spectrum
