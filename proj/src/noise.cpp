#include "atomloc/noise.hpp"

#include "atomloc/defaults.hpp"
#include "atomloc/optim.hpp"
#include "atomloc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace atomloc::noise {

NoiseParams NoiseParams::reference_camera() {
  NoiseParams p;
  p.g = defaults::em_gain();
  p.sigma_ro = 0.03 * p.g;
  p.cic_rate = 0.01;
  p.dark_rate = 0.0025;
  const double ro = p.sigma_ro / p.g;
  // stray light fills up the measured 0.6 e- background
  p.stray_rate = (p.sigma_b * p.sigma_b - ro * ro) / (p.excess_factor * p.excess_factor) -
                 p.cic_rate - p.dark_rate;
  return p;
}

NoiseParams NoiseParams::shot_noise_only(double g) {
  NoiseParams p;
  p.sigma_b = 0.0;
  p.g = g;
  p.sigma_ro = 0.0;
  return p;
}

double NoiseParams::implied_sigma_b() const {
  const double ro = sigma_ro / g;
  return std::sqrt(excess_factor * excess_factor * (stray_rate + dark_rate + cic_rate) + ro * ro);
}

void NoiseParams::validate() const {
  const double v[] = {sigma_b, c1, c2, sigma_ro, cic_rate, dark_rate, stray_rate,
                      excess_factor, intensity_noise, prnu};
  for (double x : v)
    if (!std::isfinite(x) || x < 0.0) throw std::invalid_argument("NoiseParams: parameters must be finite and >= 0");
  if (!(g >= 1.0) || !std::isfinite(g)) throw std::invalid_argument("NoiseParams: g must be >= 1");
  const double ro = sigma_ro / g;
  if (sigma_b * sigma_b < ro * ro * (1.0 - 1e-12))
    throw std::invalid_argument("NoiseParams: sigma_b below the read-out floor");
}

double sigma_model(double signal, const NoiseParams& p) {
  const double s = std::max(signal, 0.0);
  return std::sqrt(p.sigma_b * p.sigma_b + p.c1 * p.c1 * s + p.c2 * p.c2 * s * s);
}

double profile_variance(double signal, const NoiseParams& p, int n_perp) {
  const double s = std::max(signal, 0.0);
  return n_perp * p.sigma_b * p.sigma_b + p.c1 * p.c1 * s + p.c2 * p.c2 * s * s;
}

double fit_variance(double signal, const NoiseParams& p, int n_perp) {
  return std::max({profile_variance(signal, p, n_perp), p.c1 * p.c1, 1e-12});
}

double total_variance(double signal, const NoiseParams& p) {
  const double s = std::max(signal, 0.0);
  const double f2 = p.excess_factor * p.excess_factor;
  const double ro = p.sigma_ro / p.g;
  const double prop = p.intensity_noise * p.intensity_noise + p.prnu * p.prnu;
  return f2 * (s + p.stray_rate + p.dark_rate + p.cic_rate) + prop * s * s + ro * ro;
}

namespace {

constexpr int kMaxElectrons = 4;

double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

// Density of Gamma(x, theta) convolved with N(0, s) at y, for x >= 1.
double compound_density(int x, double y, double theta, double s) {
  const double mu = y - s * s / theta;
  const double z = mu / s;
  double m_prev = stats::normal_cdf(z);            // M0
  double m = mu * m_prev + s * phi(z);             // M1
  for (int n = 2; n <= x - 1; ++n) {
    const double next = mu * m + (n - 1) * s * s * m_prev;
    m_prev = m;
    m = next;
  }
  const double mn = (x == 1) ? m_prev : m;
  const double log_pre = -y / theta + s * s / (2.0 * theta * theta) - x * std::log(theta) -
                         std::lgamma(static_cast<double>(x));
  const double v = std::exp(log_pre) * std::max(mn, 0.0);
  return std::isfinite(v) ? v : 0.0;
}

// CDF of the exponentially modified Gaussian (x = 1).
double emg_cdf(double y, double theta, double s) {
  const double tail = std::exp(-y / theta + s * s / (2.0 * theta * theta)) *
                      stats::normal_cdf(y / s - s / theta);
  return stats::normal_cdf(y / s) - (std::isfinite(tail) ? tail : 0.0);
}

double component_mass(int x, double lo, double hi, double theta, double s) {
  if (x == 0) return stats::normal_cdf(hi / s) - stats::normal_cdf(lo / s);
  if (x == 1) return std::max(emg_cdf(hi, theta, s) - emg_cdf(lo, theta, s), 0.0);
  const auto& q = stats::gauss_legendre(16);
  const double c = 0.5 * (lo + hi), h = 0.5 * (hi - lo);
  double acc = 0.0;
  for (std::size_t k = 0; k < q.nodes.size(); ++k)
    acc += q.weights[k] * compound_density(x, c + h * q.nodes[k], theta, s);
  return acc * h;
}

}  // namespace

double background_bin_probability(double lo, double hi, double rate, double gain_ratio,
                                  double sigma_ro_e) {
  if (!(hi > lo)) return 0.0;
  if (!(sigma_ro_e > 0.0) || !(gain_ratio > 0.0) || rate < 0.0)
    throw std::invalid_argument("background_bin_probability: invalid parameters");
  double acc = 0.0;
  double pois = std::exp(-rate);
  for (int x = 0; x <= kMaxElectrons; ++x) {
    if (x > 0) pois *= rate / x;
    acc += pois * component_mass(x, lo, hi, gain_ratio, sigma_ro_e);
  }
  return acc;
}

BackgroundFitReport fit_background_histogram(std::span<const double> samples,
                                             double conversion_gain, double bin_width) {
  if (samples.size() < 1000) throw std::invalid_argument("fit_background_histogram: too few samples");
  if (!(conversion_gain >= 1.0)) throw std::invalid_argument("fit_background_histogram: conversion gain must be >= 1");
  if (!(bin_width > 0.0)) throw std::invalid_argument("fit_background_histogram: bin width must be positive");

  // Bins centred on multiples of the width, so the zero-electron peak sits in one bin.
  const auto [mn_it, mx_it] = std::minmax_element(samples.begin(), samples.end());
  const long b0 = static_cast<long>(std::floor(*mn_it / bin_width + 0.5));
  const long b1 = static_cast<long>(std::floor(*mx_it / bin_width + 0.5));
  const std::size_t nb = static_cast<std::size_t>(b1 - b0 + 1);
  std::vector<double> counts(nb, 0.0);
  for (double v : samples) {
    if (!std::isfinite(v)) throw std::invalid_argument("fit_background_histogram: non-finite sample");
    counts[static_cast<std::size_t>(static_cast<long>(std::floor(v / bin_width + 0.5)) - b0)] += 1.0;
  }
  std::vector<double> lo(nb), hi(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    lo[b] = (static_cast<double>(b0 + static_cast<long>(b)) - 0.5) * bin_width;
    hi[b] = lo[b] + bin_width;
  }

  // Starting values: core width from the MAD, events from the tail above 5 core widths.
  std::vector<double> sorted(samples.begin(), samples.end());
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double med = sorted[sorted.size() / 2];
  for (double& v : sorted) v = std::abs(v - med);
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  const double s0 = std::max(1.4826 * sorted[sorted.size() / 2], 0.2 * bin_width);
  double tail_n = 0.0, tail_sum = 0.0;
  for (double v : samples)
    if (v > med + 5.0 * s0) {
      tail_n += 1.0;
      tail_sum += v;
    }
  const double n_total = static_cast<double>(samples.size());
  const double frac = std::clamp(tail_n / n_total, 1e-5, 0.9);
  const double lam0 = -std::log1p(-frac);
  const double theta0 = tail_n > 10 ? std::max(tail_sum / tail_n, 5.0 * s0) : 1.0;

  auto nll = [&](std::span<const double> p) {
    const double theta = std::exp(p[0]), lam = std::exp(p[1]), s = std::exp(p[2]);
    if (!std::isfinite(theta) || !std::isfinite(lam) || !std::isfinite(s) || lam > 20.0) return 1e300;
    double total = 0.0;
    std::vector<double> prob(nb);
    for (std::size_t b = 0; b < nb; ++b) {
      prob[b] = background_bin_probability(lo[b], hi[b], lam, theta, s);
      total += prob[b];
    }
    if (!(total > 0.0)) return 1e300;
    double acc = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      if (counts[b] == 0.0) continue;
      const double pb = prob[b] / total;
      acc -= counts[b] * std::log(std::max(pb, 1e-300));
    }
    return acc;
  };

  std::vector<double> x0 = {std::log(theta0), std::log(lam0), std::log(s0)};
  const double scale[] = {0.3, 0.5, 0.3};
  optim::NelderMeadOptions nmo;
  nmo.max_evaluations = 3000;
  nmo.f_tolerance = 1e-9;
  auto res = optim::nelder_mead(nll, x0, scale, nmo);
  // One restart from the optimum to escape a collapsed simplex.
  auto res2 = optim::nelder_mead(nll, res.x, scale, nmo);
  res2.value_trace.insert(res2.value_trace.begin(), res.value_trace.begin(), res.value_trace.end());
  res2.evaluations += res.evaluations;

  // Nested null model without spurious electrons. Without them the gain is not identifiable, so
  // the compound law is kept only when it improves the fit significantly.
  auto nll0 = [&](std::span<const double> p) {
    const double v[] = {0.0, std::log(1e-12), p[0]};
    return nll(v);
  };
  const std::vector<double> y0 = {std::log(s0)};
  const double scale0[] = {0.3};
  const auto null_fit = optim::nelder_mead(nll0, y0, scale0, nmo);
  const double chi2_999_2dof = 13.82;
  if (2.0 * (null_fit.value - res2.value) < chi2_999_2dof) {
    BackgroundFitReport rep;
    const double s = std::exp(null_fit.x[0]);
    rep.g = conversion_gain;
    rep.g_err = std::numeric_limits<double>::infinity();
    rep.spurious_rate = 0.0;
    rep.sigma_ro = s * conversion_gain;
    rep.sigma_b = s;
    rep.log_likelihood = -null_fit.value;
    rep.iterations = res2.evaluations + null_fit.evaluations;
    rep.converged = null_fit.converged;
    rep.n_samples = samples.size();
    rep.bin_width = bin_width;
    for (double v : null_fit.value_trace) rep.likelihood_trace.push_back(-v);
    const double step[] = {1e-3};
    const Eigen::MatrixXd h = optim::numeric_hessian(nll0, null_fit.x, step);
    if (h(0, 0) > 0.0) rep.sigma_ro_err = rep.sigma_ro / std::sqrt(h(0, 0));
    return rep;
  }

  BackgroundFitReport rep;
  const double theta = std::exp(res2.x[0]), lam = std::exp(res2.x[1]), s = std::exp(res2.x[2]);
  rep.g = theta * conversion_gain;
  rep.spurious_rate = lam;
  rep.sigma_ro = s * conversion_gain;
  rep.sigma_b = std::sqrt(2.0 * lam * theta * theta + s * s);
  rep.log_likelihood = -res2.value;
  rep.iterations = res2.evaluations;
  rep.converged = res2.converged;
  rep.n_samples = samples.size();
  rep.bin_width = bin_width;
  for (double v : res2.value_trace) rep.likelihood_trace.push_back(-v);

  const double steps[] = {1e-3, 1e-3, 1e-3};
  const Eigen::MatrixXd h = optim::numeric_hessian(nll, res2.x, steps);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(h);
  if (lu.isInvertible()) {
    const Eigen::MatrixXd cov = lu.inverse();
    rep.g_err = rep.g * std::sqrt(std::max(cov(0, 0), 0.0));
    rep.spurious_rate_err = lam * std::sqrt(std::max(cov(1, 1), 0.0));
    rep.sigma_ro_err = rep.sigma_ro * std::sqrt(std::max(cov(2, 2), 0.0));
  } else {
    rep.converged = false;
  }
  return rep;
}

SnrCurve estimate_snr_curve(std::span<const std::vector<PixelImage>> stacks,
                            std::span<const double> bin_edges, double background_offset) {
  if (bin_edges.size() < 2) throw std::invalid_argument("estimate_snr_curve: need at least two bin edges");
  if (!std::is_sorted(bin_edges.begin(), bin_edges.end()))
    throw std::invalid_argument("estimate_snr_curve: bin edges must be sorted");
  const std::size_t nb = bin_edges.size() - 1;
  std::vector<double> sum_mean(nb, 0.0), sum_var(nb, 0.0), sum_var2(nb, 0.0);
  std::vector<std::size_t> count(nb, 0);
  for (const auto& stack : stacks) {
    if (stack.size() < 2) throw std::invalid_argument("estimate_snr_curve: stack with fewer than 2 frames");
    const std::size_t npx = stack.front().counts().size();
    for (const auto& f : stack)
      if (f.counts().size() != npx) throw std::invalid_argument("estimate_snr_curve: frame size mismatch");
    const double n = static_cast<double>(stack.size());
    for (std::size_t k = 0; k < npx; ++k) {
      double m = 0.0;
      for (const auto& f : stack) m += f.counts()[k];
      m /= n;
      double v = 0.0;
      for (const auto& f : stack) v += (f.counts()[k] - m) * (f.counts()[k] - m);
      v /= (n - 1.0);
      const double sig = m - background_offset;
      const auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), sig);
      if (it == bin_edges.begin() || it == bin_edges.end()) continue;
      const auto b = static_cast<std::size_t>(it - bin_edges.begin()) - 1;
      sum_mean[b] += sig;
      sum_var[b] += v;
      sum_var2[b] += v * v;
      ++count[b];
    }
  }
  SnrCurve curve;
  for (std::size_t b = 0; b < nb; ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    SnrBin bin;
    bin.count = count[b];
    bin.mean_signal = sum_mean[b] / c;
    const double mv = sum_var[b] / c;
    bin.rms_noise = std::sqrt(mv);
    if (count[b] > 1 && mv > 0.0) {
      const double vv = std::max(sum_var2[b] / c - mv * mv, 0.0) * c / (c - 1.0);
      bin.rms_stderr = std::sqrt(vv / c) / (2.0 * bin.rms_noise);
    }
    curve.bins.push_back(bin);
  }
  return curve;
}

}  // namespace atomloc::noise
