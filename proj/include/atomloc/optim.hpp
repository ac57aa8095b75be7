#pragma once

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace atomloc::optim {

using ResidualFn = std::function<void(std::span<const double> params, std::span<double> residuals)>;
using JacobianFn = std::function<void(std::span<const double> params, Eigen::MatrixXd& jac)>;

struct LeastSquaresProblem {
  std::size_t n_residuals = 0;
  ResidualFn residuals;
  /// Optional analytic Jacobian (n_residuals x n_params). Forward differences are used if empty.
  JacobianFn jacobian;
};

struct LmOptions {
  int max_iterations = 200;
  /// Stop once an accepted step lowers the cost by less than this fraction.
  double relative_cost_tolerance = 1e-8;
  double step_tolerance = 1e-12;
  double gradient_tolerance = 1e-12;
  /// Stop at an exact fit: cost below this fraction of the starting cost.
  double zero_cost_fraction = 1e-20;
  /// Relative forward-difference step for numeric Jacobians.
  double fd_step = 1e-6;
};

struct LmResult {
  std::vector<double> params;
  double cost = 0.0;  // sum of squared residuals
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::vector<bool> at_bound;
  /// (J^T J)^-1 at the solution over all parameters; NaN rows for parameters pinned at a bound.
  Eigen::MatrixXd covariance;
  std::vector<double> cost_trace;
};

/**
 * Levenberg-Marquardt with hard box constraints.
 *
 * Parameters that sit on a bound with the gradient pointing outwards are frozen for the
 * step; every trial point is projected back into the box, so bounds are never violated.
 */
LmResult levenberg_marquardt(const LeastSquaresProblem& problem, std::vector<double> x0,
                             std::span<const double> lower, std::span<const double> upper,
                             const LmOptions& options = {});

/// Unbounded convenience overload.
LmResult levenberg_marquardt(const LeastSquaresProblem& problem, std::vector<double> x0,
                             const LmOptions& options = {});

struct NelderMeadOptions {
  int max_evaluations = 4000;
  double f_tolerance = 1e-10;
  double x_tolerance = 1e-10;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = false;
  std::vector<double> value_trace;
};

/// Downhill simplex minimization; `scale` sets the initial simplex edge per coordinate.
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, std::span<const double> scale,
                             const NelderMeadOptions& options = {});

/// Central-difference Hessian of a scalar function.
Eigen::MatrixXd numeric_hessian(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> x, std::span<const double> steps);

}  // namespace atomloc::optim
