#include "atomloc/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace atomloc::optim {
namespace {

double sum_sq(std::span<const double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  return s;
}

void numeric_jacobian(const LeastSquaresProblem& problem, std::span<const double> x,
                      std::span<const double> r0, std::span<const double> lower,
                      std::span<const double> upper, double rel_step, Eigen::MatrixXd& jac,
                      int& evals) {
  const std::size_t n = x.size();
  std::vector<double> xp(x.begin(), x.end());
  std::vector<double> rp(problem.n_residuals);
  for (std::size_t j = 0; j < n; ++j) {
    double h = rel_step * std::max(std::abs(x[j]), 1.0);
    // Step inwards when the forward point would leave the box.
    if (x[j] + h > upper[j]) h = -h;
    xp[j] = x[j] + h;
    problem.residuals(xp, rp);
    ++evals;
    for (std::size_t i = 0; i < problem.n_residuals; ++i) jac(i, j) = (rp[i] - r0[i]) / h;
    xp[j] = x[j];
  }
  (void)lower;
}

}  // namespace

LmResult levenberg_marquardt(const LeastSquaresProblem& problem, std::vector<double> x,
                             std::span<const double> lower, std::span<const double> upper,
                             const LmOptions& opt) {
  const std::size_t n = x.size();
  const std::size_t m = problem.n_residuals;
  if (lower.size() != n || upper.size() != n)
    throw std::invalid_argument("levenberg_marquardt: bounds size mismatch");
  for (std::size_t j = 0; j < n; ++j) {
    if (lower[j] > upper[j]) throw std::invalid_argument("levenberg_marquardt: empty box");
    x[j] = std::clamp(x[j], lower[j], upper[j]);
  }

  LmResult res;
  std::vector<double> r(m), r_trial(m), x_trial(n);
  problem.residuals(x, r);
  res.evaluations = 1;
  double cost = sum_sq(r);
  res.cost_trace.push_back(cost);

  Eigen::MatrixXd J(m, n);
  double mu = -1.0;
  double nu = 2.0;
  bool need_jac = true;
  std::vector<bool> free(n, true);
  Eigen::VectorXd g(n);

  const double start_cost = cost;
  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (cost <= opt.zero_cost_fraction * start_cost) {
      res.converged = true;
      res.message = "zero residual";
      break;
    }
    if (need_jac) {
      if (problem.jacobian) {
        problem.jacobian(x, J);
      } else {
        numeric_jacobian(problem, x, r, lower, upper, opt.fd_step, J, res.evaluations);
      }
      Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(m));
      g = J.transpose() * rv;
      need_jac = false;
    }

    std::vector<Eigen::Index> idx;
    for (std::size_t j = 0; j < n; ++j) {
      const bool pinned_low = x[j] <= lower[j] && g[j] > 0.0;
      const bool pinned_high = x[j] >= upper[j] && g[j] < 0.0;
      free[j] = !(pinned_low || pinned_high);
      if (free[j]) idx.push_back(static_cast<Eigen::Index>(j));
    }
    if (idx.empty()) {
      res.converged = true;
      res.message = "all parameters pinned at bounds";
      break;
    }
    const auto nf = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd Jf(static_cast<Eigen::Index>(m), nf);
    Eigen::VectorXd gf(nf);
    for (Eigen::Index k = 0; k < nf; ++k) {
      Jf.col(k) = J.col(idx[k]);
      gf[k] = g[idx[k]];
    }
    if (gf.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance * std::max(cost, 1e-300)) {
      res.converged = true;
      res.message = "gradient below tolerance";
      break;
    }
    Eigen::MatrixXd A = Jf.transpose() * Jf;
    if (mu < 0.0) mu = 1e-3 * std::max(A.diagonal().maxCoeff(), 1e-12);

    Eigen::MatrixXd Aug = A;
    for (Eigen::Index k = 0; k < nf; ++k) Aug(k, k) += mu * std::max(A(k, k), 1e-12);
    Eigen::VectorXd step = Aug.ldlt().solve(-gf);
    if (!step.allFinite()) {
      mu *= nu;
      nu *= 2.0;
      continue;
    }

    x_trial = x;
    for (Eigen::Index k = 0; k < nf; ++k) {
      const auto j = static_cast<std::size_t>(idx[k]);
      x_trial[j] = std::clamp(x[j] + step[k], lower[j], upper[j]);
    }
    double step_norm = 0.0, x_norm = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      step_norm += (x_trial[j] - x[j]) * (x_trial[j] - x[j]);
      x_norm += x[j] * x[j];
    }
    if (std::sqrt(step_norm) <= opt.step_tolerance * (std::sqrt(x_norm) + opt.step_tolerance)) {
      res.converged = true;
      res.message = "step below tolerance";
      break;
    }

    problem.residuals(x_trial, r_trial);
    ++res.evaluations;
    const double cost_trial = sum_sq(r_trial);
    // Predicted reduction of the quadratic model (cost = |r|^2).
    const double predicted = -(2.0 * step.dot(gf) + step.dot(A * step));
    const double actual = cost - cost_trial;
    if (std::isfinite(cost_trial) && actual > 0.0) {
      const double rho = predicted > 0.0 ? actual / predicted : 1.0;
      x = x_trial;
      r.swap(r_trial);
      const double old_cost = cost;
      cost = cost_trial;
      res.cost_trace.push_back(cost);
      need_jac = true;
      mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
      nu = 2.0;
      if (actual <= opt.relative_cost_tolerance * old_cost) {
        res.converged = true;
        res.message = "relative cost change below tolerance";
        ++res.iterations;
        break;
      }
    } else {
      mu *= nu;
      nu *= 2.0;
      if (mu > 1e16) {
        res.converged = true;
        res.message = "damping saturated at a stationary point";
        break;
      }
    }
  }
  if (!res.converged && res.message.empty()) res.message = "iteration limit reached";

  // Final Jacobian for the covariance estimate.
  if (need_jac) {
    if (problem.jacobian) {
      problem.jacobian(x, J);
    } else {
      numeric_jacobian(problem, x, r, lower, upper, opt.fd_step, J, res.evaluations);
    }
    Eigen::Map<const Eigen::VectorXd> rv(r.data(), static_cast<Eigen::Index>(m));
    g = J.transpose() * rv;
  }
  res.at_bound.assign(n, false);
  std::vector<Eigen::Index> idx;
  for (std::size_t j = 0; j < n; ++j) {
    res.at_bound[j] = x[j] <= lower[j] || x[j] >= upper[j];
    if (!res.at_bound[j]) idx.push_back(static_cast<Eigen::Index>(j));
  }
  res.covariance = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n),
                                             static_cast<Eigen::Index>(n),
                                             std::numeric_limits<double>::quiet_NaN());
  if (!idx.empty()) {
    const auto nf = static_cast<Eigen::Index>(idx.size());
    Eigen::MatrixXd Jf(static_cast<Eigen::Index>(m), nf);
    for (Eigen::Index k = 0; k < nf; ++k) Jf.col(k) = J.col(idx[k]);
    Eigen::MatrixXd cov = (Jf.transpose() * Jf).completeOrthogonalDecomposition().pseudoInverse();
    for (Eigen::Index a = 0; a < nf; ++a)
      for (Eigen::Index b = 0; b < nf; ++b) res.covariance(idx[a], idx[b]) = cov(a, b);
  }
  res.params = std::move(x);
  res.cost = cost;
  return res;
}

LmResult levenberg_marquardt(const LeastSquaresProblem& problem, std::vector<double> x0,
                             const LmOptions& options) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> lo(x0.size(), -inf), hi(x0.size(), inf);
  return levenberg_marquardt(problem, std::move(x0), lo, hi, options);
}

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> x0, std::span<const double> scale,
                             const NelderMeadOptions& opt) {
  const std::size_t n = x0.size();
  if (scale.size() != n) throw std::invalid_argument("nelder_mead: scale size mismatch");
  std::vector<std::vector<double>> simplex(n + 1, x0);
  std::vector<double> fv(n + 1);
  NelderMeadResult res;
  auto eval = [&](const std::vector<double>& p) {
    ++res.evaluations;
    const double v = f(p);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += scale[i];
  for (std::size_t i = 0; i <= n; ++i) fv[i] = eval(simplex[i]);

  std::vector<std::size_t> order(n + 1);
  std::vector<double> centroid(n), xr(n), xe(n), xc(n);
  while (res.evaluations < opt.max_evaluations) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];
    res.value_trace.push_back(fv[best]);

    double xspread = 0.0;
    for (std::size_t i = 0; i <= n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        xspread = std::max(xspread, std::abs(simplex[i][j] - simplex[best][j]));
    if (std::abs(fv[worst] - fv[best]) <= opt.f_tolerance * (std::abs(fv[best]) + 1e-300) &&
        xspread <= opt.x_tolerance * (1.0 + std::abs(simplex[best][0]))) {
      res.converged = true;
      break;
    }
    if (std::abs(fv[worst] - fv[best]) <= opt.f_tolerance * 1e-3 * (std::abs(fv[best]) + 1.0)) {
      res.converged = true;
      break;
    }

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t i = 0; i <= n; ++i)
      if (i != worst)
        for (std::size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j] / static_cast<double>(n);

    for (std::size_t j = 0; j < n; ++j) xr[j] = centroid[j] + (centroid[j] - simplex[worst][j]);
    const double fr = eval(xr);
    if (fr < fv[best]) {
      for (std::size_t j = 0; j < n; ++j) xe[j] = centroid[j] + 2.0 * (centroid[j] - simplex[worst][j]);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[worst] = xe;
        fv[worst] = fe;
      } else {
        simplex[worst] = xr;
        fv[worst] = fr;
      }
      continue;
    }
    if (fr < fv[second]) {
      simplex[worst] = xr;
      fv[worst] = fr;
      continue;
    }
    const bool outside = fr < fv[worst];
    for (std::size_t j = 0; j < n; ++j)
      xc[j] = outside ? centroid[j] + 0.5 * (xr[j] - centroid[j])
                      : centroid[j] + 0.5 * (simplex[worst][j] - centroid[j]);
    const double fc = eval(xc);
    if (fc < std::min(fr, fv[worst])) {
      simplex[worst] = xc;
      fv[worst] = fc;
      continue;
    }
    // Shrink towards the best vertex.
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t j = 0; j < n; ++j)
        simplex[i][j] = simplex[best][j] + 0.5 * (simplex[i][j] - simplex[best][j]);
      fv[i] = eval(simplex[i]);
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(fv.begin(), fv.end()) - fv.begin());
  res.x = simplex[best];
  res.value = fv[best];
  return res;
}

Eigen::MatrixXd numeric_hessian(const std::function<double(std::span<const double>)>& f,
                                std::span<const double> x, std::span<const double> h) {
  const std::size_t n = x.size();
  Eigen::MatrixXd H(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<double> p(x.begin(), x.end());
  const double f0 = f(p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v;
      if (i == j) {
        p[i] = x[i] + h[i];
        const double fp = f(p);
        p[i] = x[i] - h[i];
        const double fm = f(p);
        p[i] = x[i];
        v = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
      } else {
        auto at = [&](double si, double sj) {
          p[i] = x[i] + si * h[i];
          p[j] = x[j] + sj * h[j];
          const double val = f(p);
          p[i] = x[i];
          p[j] = x[j];
          return val;
        };
        v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h[i] * h[j]);
      }
      H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  return H;
}

}  // namespace atomloc::optim
