#pragma once

#include <span>
#include <utility>
#include <vector>

namespace atomloc::stats {

double mean(std::span<const double> x);
/// Unbiased sample variance (n - 1 denominator).
double variance(std::span<const double> x);
double rms(std::span<const double> x);

/// Lower-tail chi-square CDF with `dof` degrees of freedom.
double chi2_cdf(double x, double dof);
/// Upper-tail chi-square probability.
double chi2_sf(double x, double dof);
double normal_cdf(double z);

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};

/// One-sample Kolmogorov-Smirnov test of `u` against Uniform(0, 1).
KsResult ks_uniform(std::vector<double> u);

/// Least-squares line y = intercept + slope * x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};
LineFit fit_line(std::span<const double> x, std::span<const double> y);

/// Gauss-Legendre nodes and weights on [-1, 1].
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const Quadrature& gauss_legendre(int n);

}  // namespace atomloc::stats
