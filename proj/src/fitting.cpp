#include "atomloc/localization.hpp"
#include "atomloc/optim.hpp"
#include "atomloc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace atomloc::loc {

AmplitudeBounds AmplitudeBounds::from_histogram(double peak, double width) {
  if (!(peak > 0.0) || !(width > 0.0)) throw std::invalid_argument("AmplitudeBounds: peak and width must be positive");
  return {std::max(0.0, peak - 5.0 * width), peak + 5.0 * width};
}

std::vector<double> model_profile(std::size_t n, const ResponseLsf& lsf, std::span<const double> xi,
                                  std::span<const double> A) {
  if (xi.size() != A.size()) throw std::invalid_argument("model_profile: size mismatch");
  std::vector<double> out(n, 0.0);
  for (std::size_t l = 0; l < xi.size(); ++l)
    for (std::size_t i = 0; i < n; ++i) out[i] += A[l] * lsf(static_cast<double>(i) - xi[l]);
  return out;
}

double chi2_of(std::span<const double> roi, std::span<const double> model,
               const noise::NoiseParams& noise, int n_perp) {
  if (roi.size() != model.size()) throw std::invalid_argument("chi2_of: size mismatch");
  double c = 0.0;
  for (std::size_t i = 0; i < roi.size(); ++i) {
    const double d = roi[i] - model[i];
    c += d * d / noise::fit_variance(model[i], noise, n_perp);
  }
  return c;
}

namespace {

// Weighted residual (S - I) / sigma(I) and its derivative with respect to I.
struct Weighted {
  double r;
  double dr_dI;
};

Weighted weighted(double s, double model, const noise::NoiseParams& noise, int n_perp) {
  const double var = noise::fit_variance(model, noise, n_perp);
  const double sig = std::sqrt(var);
  const bool floored = var > noise::profile_variance(model, noise, n_perp);
  const double dvar = model > 0.0 && !floored ? noise.c1 * noise.c1 + 2.0 * noise.c2 * noise.c2 * model : 0.0;
  const double dsig = dvar / (2.0 * sig);
  const double d = s - model;
  return {d / sig, -1.0 / sig - d * dsig / var};
}

}  // namespace

AtomEstimate nlls_fit(std::span<const double> roi, const ResponseLsf& lsf, int m,
                      std::span<const double> seeds, const noise::NoiseParams& noise, int n_perp,
                      const AmplitudeBounds& bounds) {
  if (m < 1) throw std::invalid_argument("nlls_fit: m must be >= 1");
  if (static_cast<int>(seeds.size()) != m) throw std::invalid_argument("nlls_fit: need one seed per atom");
  const std::size_t n = roi.size();
  if (n <= static_cast<std::size_t>(2 * m)) throw std::invalid_argument("nlls_fit: ROI too short for m atoms");
  const auto M = static_cast<std::size_t>(m);
  if (noise.sigma_b <= 0.0 && noise.c1 <= 0.0 && noise.c2 <= 0.0)
    throw std::invalid_argument("nlls_fit: noise model has zero variance");

  std::vector<double> seed(seeds.begin(), seeds.end());
  std::sort(seed.begin(), seed.end());

  // Amplitude start: least squares for fixed seeds, clamped into the bounds.
  Eigen::MatrixXd B(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(M));
  Eigen::VectorXd s(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    s(static_cast<Eigen::Index>(i)) = roi[i];
    for (std::size_t l = 0; l < M; ++l)
      B(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = lsf(static_cast<double>(i) - seed[l]);
  }
  Eigen::VectorXd a0 = B.colPivHouseholderQr().solve(s);

  std::vector<double> x0(2 * M), lo(2 * M), hi(2 * M);
  for (std::size_t l = 0; l < M; ++l) {
    x0[l] = seed[l];
    lo[l] = -0.5;
    hi[l] = static_cast<double>(n) - 0.5;
    lo[M + l] = bounds.lo;
    hi[M + l] = bounds.hi;
    double a = a0(static_cast<Eigen::Index>(l));
    if (!std::isfinite(a)) a = 0.5 * (bounds.lo + std::min(bounds.hi, bounds.lo + 1e4));
    x0[M + l] = std::clamp(a, bounds.lo, bounds.hi);
  }

  optim::LeastSquaresProblem prob;
  prob.n_residuals = n;
  std::vector<double> model(n);
  auto eval_model = [&](std::span<const double> p) {
    std::fill(model.begin(), model.end(), 0.0);
    for (std::size_t l = 0; l < M; ++l)
      for (std::size_t i = 0; i < n; ++i) model[i] += p[M + l] * lsf(static_cast<double>(i) - p[l]);
  };
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    eval_model(p);
    for (std::size_t i = 0; i < n; ++i) r[i] = weighted(roi[i], model[i], noise, n_perp).r;
  };
  prob.jacobian = [&](std::span<const double> p, Eigen::MatrixXd& J) {
    eval_model(p);
    for (std::size_t i = 0; i < n; ++i) {
      const double k = weighted(roi[i], model[i], noise, n_perp).dr_dI;
      const auto ii = static_cast<Eigen::Index>(i);
      for (std::size_t l = 0; l < M; ++l) {
        const double x = static_cast<double>(i) - p[l];
        J(ii, static_cast<Eigen::Index>(l)) = k * (-p[M + l] * lsf.derivative(x));
        J(ii, static_cast<Eigen::Index>(M + l)) = k * lsf(x);
      }
    }
  };
  optim::LmOptions lmo;
  lmo.relative_cost_tolerance = 1e-8;
  const auto res = optim::levenberg_marquardt(prob, x0, lo, hi, lmo);

  AtomEstimate est;
  std::vector<std::size_t> order(M);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return res.params[a] < res.params[b]; });
  for (std::size_t k = 0; k < M; ++k) {
    if (order[k] != k) est.seed_order_violated = true;
    est.xi.push_back(res.params[order[k]]);
    est.A.push_back(res.params[M + order[k]]);
    est.amplitude_at_bound.push_back(res.at_bound.empty() ? false : res.at_bound[M + order[k]]);
  }
  est.chi2 = res.cost;
  est.dof = static_cast<int>(n) - 2 * m;
  est.confidence = stats::chi2_sf(est.chi2, est.dof);
  est.converged = res.converged;
  if (!res.converged) est.flags.push_back("nlls not converged: " + res.message);
  if (est.seed_order_violated) est.flags.push_back("seed order violated");
  for (bool b : est.amplitude_at_bound)
    if (b) {
      est.flags.push_back("amplitude pinned at bound");
      break;
    }
  return est;
}

}  // namespace atomloc::loc

namespace atomloc::loc {

LocalizeResult localize(std::span<const double> window, std::pair<std::size_t, std::size_t> core,
                        const ResponseLsf& lsf, int m, const noise::NoiseParams& noise, int n_perp,
                        const AmplitudeBounds& bounds, const WienerOptions& wiener) {
  if (core.second <= core.first || core.second > window.size())
    throw std::invalid_argument("localize: core outside the window");
  const auto w = wiener_deconvolve(window, lsf, noise, n_perp, wiener);
  const double lo = static_cast<double>(core.first);
  const double hi = static_cast<double>(core.second) - 1.0;
  LocalizeResult out;
  out.seeds = music_estimate(w, m, std::pair{lo, hi}).positions;

  std::vector<std::vector<double>> starts = {out.seeds};
  for (double frac : {1.0, 0.5}) {
    const double mid = 0.5 * (lo + hi);
    const double half = 0.5 * frac * (hi - lo);
    std::vector<double> s;
    for (int l = 0; l < m; ++l) s.push_back(mid - half + (2.0 * half) * (l + 0.5) / m);
    starts.push_back(std::move(s));
  }
  bool have = false;
  for (const auto& s : starts) {
    auto e = nlls_fit(window, lsf, m, s, noise, n_perp, bounds);
    ++out.starts;
    if (!have || e.chi2 < out.estimate.chi2) {
      out.estimate = std::move(e);
      have = true;
    }
  }
  return out;
}

}  // namespace atomloc::loc
