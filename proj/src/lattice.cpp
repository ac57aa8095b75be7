#include "atomloc/localization.hpp"
#include "atomloc/optim.hpp"
#include "atomloc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>

namespace atomloc::loc {

namespace {

struct ConfigFit {
  double delta = 0.0;
  std::vector<double> A;
  double chi2 = std::numeric_limits<double>::infinity();
  bool converged = false;
  std::vector<bool> at_bound;
};

// Fits amplitudes (and the offset when free) for atoms at delta + offsets[l].
ConfigFit fit_config(std::span<const double> roi, const ResponseLsf& lsf, const noise::NoiseParams& noise,
                     int n_perp, const std::vector<double>& offsets, double delta0, bool free_delta,
                     std::span<const double> A0, const AmplitudeBounds& bounds) {
  const std::size_t n = roi.size(), M = offsets.size();
  const std::size_t np = M + (free_delta ? 1 : 0);
  std::vector<double> x0(np), lo(np), hi(np);
  for (std::size_t l = 0; l < M; ++l) {
    x0[l] = std::clamp(A0[l], bounds.lo, bounds.hi);
    lo[l] = bounds.lo;
    hi[l] = bounds.hi;
  }
  if (free_delta) {
    x0[M] = delta0;
    lo[M] = delta0 - 2.0;
    hi[M] = delta0 + 2.0;
  }
  std::vector<double> model(n);
  auto eval = [&](std::span<const double> p) {
    const double d = free_delta ? p[M] : delta0;
    std::fill(model.begin(), model.end(), 0.0);
    for (std::size_t l = 0; l < M; ++l)
      for (std::size_t i = 0; i < n; ++i) model[i] += p[l] * lsf(static_cast<double>(i) - d - offsets[l]);
    return d;
  };
  optim::LeastSquaresProblem prob;
  prob.n_residuals = n;
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    eval(p);
    for (std::size_t i = 0; i < n; ++i) {
      const double var = noise::fit_variance(model[i], noise, n_perp);
      r[i] = (roi[i] - model[i]) / std::sqrt(var);
    }
  };
  prob.jacobian = [&](std::span<const double> p, Eigen::MatrixXd& J) {
    const double d = eval(p);
    for (std::size_t i = 0; i < n; ++i) {
      const double var = noise::fit_variance(model[i], noise, n_perp);
      const double sig = std::sqrt(var);
      const bool floored = var > noise::profile_variance(model[i], noise, n_perp);
      const double dvar =
          model[i] > 0.0 && !floored ? noise.c1 * noise.c1 + 2.0 * noise.c2 * noise.c2 * model[i] : 0.0;
      const double k = -1.0 / sig - (roi[i] - model[i]) * dvar / (2.0 * sig * var);
      const auto ii = static_cast<Eigen::Index>(i);
      double dd = 0.0;
      for (std::size_t l = 0; l < M; ++l) {
        const double x = static_cast<double>(i) - d - offsets[l];
        J(ii, static_cast<Eigen::Index>(l)) = k * lsf(x);
        dd += -p[l] * lsf.derivative(x);
      }
      if (free_delta) J(ii, static_cast<Eigen::Index>(M)) = k * dd;
    }
  };
  optim::LmOptions lmo;
  lmo.relative_cost_tolerance = 1e-8;
  const auto res = optim::levenberg_marquardt(prob, x0, lo, hi, lmo);
  ConfigFit out;
  out.A.assign(res.params.begin(), res.params.begin() + static_cast<long>(M));
  out.delta = free_delta ? res.params[M] : delta0;
  out.chi2 = res.cost;
  out.converged = res.converged;
  out.at_bound.assign(res.at_bound.begin(), res.at_bound.begin() + static_cast<long>(M));
  return out;
}

AtomEstimate refine_impl(const AtomEstimate& est, std::span<const double> roi, const LatticeModel& lattice,
                         const ResponseLsf& lsf, const noise::NoiseParams& noise, int n_perp,
                         const RefineOptions& opt, std::optional<double> fixed_phase) {
  lattice.validate();
  const std::size_t M = est.xi.size();
  if (M == 0) throw std::invalid_argument("lattice_refine: empty estimate");
  if (est.A.size() != M) throw std::invalid_argument("lattice_refine: amplitude count mismatch");
  const double a = lattice.a_px;
  std::vector<double> xi = est.xi;
  std::sort(xi.begin(), xi.end());

  // Candidate distances per neighbour pair.
  std::vector<std::vector<long>> choices(M > 0 ? M - 1 : 0);
  for (std::size_t l = 0; l + 1 < M; ++l) {
    // A rounded distance of 0 is impossible; widen around 1 instead.
    const long r = std::max(1L, std::lround((xi[l + 1] - xi[l]) / a));
    for (long d = r - 1; d <= r + 1; ++d)
      if (d >= 1) choices[l].push_back(d);
  }
  std::vector<std::size_t> idx(choices.size(), 0);

  struct Best {
    ConfigFit fit;
    std::vector<long> dist;
    std::vector<double> offsets;
    double displacement = std::numeric_limits<double>::infinity();
  } best;
  int tried = 0;
  for (;;) {
    std::vector<long> dist(choices.size());
    std::vector<double> offsets(M, 0.0);
    for (std::size_t l = 0; l < choices.size(); ++l) {
      dist[l] = choices[l][idx[l]];
      offsets[l + 1] = offsets[l] + a * static_cast<double>(dist[l]);
    }
    double d0 = 0.0;
    for (std::size_t l = 0; l < M; ++l) d0 += xi[l] - offsets[l];
    d0 /= static_cast<double>(M);

    std::vector<ConfigFit> fits;
    if (fixed_phase) {
      const long k0 = std::lround((d0 - *fixed_phase) / a);
      for (long k = k0 - 1; k <= k0 + 1; ++k)
        fits.push_back(fit_config(roi, lsf, noise, n_perp, offsets, *fixed_phase + a * static_cast<double>(k),
                                  false, est.A, opt.bounds));
    } else {
      fits.push_back(fit_config(roi, lsf, noise, n_perp, offsets, d0, true, est.A, opt.bounds));
    }
    for (auto& f : fits) {
      ++tried;
      double disp = 0.0;
      for (std::size_t l = 0; l < M; ++l) disp += std::abs(xi[l] - f.delta - offsets[l]);
      const double tol = 1e-9 * std::max(1.0, best.fit.chi2);
      const bool better = f.chi2 < best.fit.chi2 - tol ||
                          (std::abs(f.chi2 - best.fit.chi2) <= tol && disp < best.displacement);
      if (better) {
        best.fit = std::move(f);
        best.dist = dist;
        best.offsets = offsets;
        best.displacement = disp;
      }
    }
    std::size_t l = 0;
    while (l < idx.size() && ++idx[l] == choices[l].size()) idx[l++] = 0;
    if (l == idx.size()) break;
  }

  AtomEstimate out;
  const double d = best.fit.delta;
  for (std::size_t l = 0; l < M; ++l) out.xi.push_back(d + best.offsets[l]);
  out.A = best.fit.A;
  out.amplitude_at_bound = best.fit.at_bound;
  out.chi2 = best.fit.chi2;
  out.dof = static_cast<int>(roi.size()) - static_cast<int>(M) - (fixed_phase ? 0 : 1);
  out.confidence = stats::chi2_sf(out.chi2, out.dof);
  out.converged = best.fit.converged;
  out.reliable = out.confidence >= opt.reject_below;
  const long p0 = std::lround((d - lattice.delta_L) / a);
  out.p.push_back(p0);
  for (long dl : best.dist) out.p.push_back(out.p.back() + dl);
  out.delta_L = d - a * static_cast<double>(p0);
  out.flags.push_back("combinations tried: " + std::to_string(tried));
  if (!out.reliable) out.flags.push_back("rejected by likelihood-ratio test");
  return out;
}

}  // namespace

AtomEstimate lattice_refine(const AtomEstimate& est, std::span<const double> roi, const LatticeModel& lattice,
                            const ResponseLsf& lsf, const noise::NoiseParams& noise, int n_perp,
                            const RefineOptions& opt) {
  return refine_impl(est, roi, lattice, lsf, noise, n_perp, opt, std::nullopt);
}

std::vector<AtomEstimate> lattice_refine_joint(const std::vector<AtomEstimate>& ests,
                                               const std::vector<std::vector<double>>& rois,
                                               std::span<const std::size_t> roi_starts,
                                               const LatticeModel& lattice, const ResponseLsf& lsf,
                                               const noise::NoiseParams& noise, int n_perp,
                                               const RefineOptions& opt) {
  if (ests.size() != rois.size() || ests.size() != roi_starts.size())
    throw std::invalid_argument("lattice_refine_joint: size mismatch");
  if (ests.empty()) return {};
  const double a = lattice.a_px;
  // Shared phase: circular mean of the individually refined offsets in frame coordinates.
  double c = 0.0, s = 0.0;
  std::vector<AtomEstimate> single;
  for (std::size_t r = 0; r < ests.size(); ++r) {
    single.push_back(refine_impl(ests[r], rois[r], lattice, lsf, noise, n_perp, opt, std::nullopt));
    const double frame_delta = single.back().xi.front() + static_cast<double>(roi_starts[r]);
    const double ang = 2.0 * std::numbers::pi * frame_delta / a;
    const double w = 1.0;  // uniform weights
    c += w * std::cos(ang);
    s += w * std::sin(ang);
  }
  double phase = std::atan2(s, c) / (2.0 * std::numbers::pi) * a;
  if (phase < 0.0) phase += a;
  std::vector<AtomEstimate> out;
  for (std::size_t r = 0; r < ests.size(); ++r) {
    LatticeModel local = lattice;
    local.delta_L = phase - static_cast<double>(roi_starts[r]);
    auto e = refine_impl(ests[r], rois[r], local, lsf, noise, n_perp, opt, local.delta_L);
    out.push_back(std::move(e));
  }
  return out;
}

LatticeCalibration calibrate_lattice(std::span<const double> distances, double a_nm) {
  if (distances.size() < 100) throw std::invalid_argument("calibrate_lattice: need at least 100 distances");
  std::vector<double> d;
  for (double v : distances) {
    if (!std::isfinite(v)) throw std::invalid_argument("calibrate_lattice: non-finite distance");
    d.push_back(std::abs(v));
  }
  auto resultant = [&](double a) {
    double c = 0.0, s = 0.0;
    for (double v : d) {
      c += std::cos(2.0 * std::numbers::pi * v / a);
      s += std::sin(2.0 * std::numbers::pi * v / a);
    }
    return std::hypot(c, s) / static_cast<double>(d.size());
  };
  double best_a = 1.0, best_r = -1.0;
  for (double a = 1.0; a <= 2.0 + 1e-12; a += 0.0005) {
    const double r = resultant(a);
    if (r > best_r) {
      best_r = r;
      best_a = a;
    }
  }
  if (best_r < 0.3) throw std::runtime_error("calibrate_lattice: no consistent divisor in [1, 2] px");
  double a = best_a;
  for (int it = 0; it < 5; ++it) {
    double num = 0.0, den = 0.0;
    for (double v : d) {
      const double k = std::max(1.0, static_cast<double>(std::lround(v / a)));
      num += k * v;
      den += k * k;
    }
    a = num / den;
  }
  LatticeCalibration cal;
  cal.lattice.a_px = a;
  cal.lattice.a_nm = a_nm;
  cal.resultant = resultant(a);
  cal.n_samples = d.size();
  double ss = 0.0;
  for (double v : d) {
    const double k = std::max(1.0, static_cast<double>(std::lround(v / a)));
    ss += (v - k * a) * (v - k * a);
  }
  cal.residual_rms = std::sqrt(ss / static_cast<double>(d.size()));
  return cal;
}

double precision_bound(double rms_psf_um, double delta_p_um, double n_photons, double sigma_b,
                       int n_perp, bool emccd) {
  if (!(rms_psf_um > 0.0) || !(delta_p_um >= 0.0) || !(n_photons > 0.0) || !(sigma_b >= 0.0) || n_perp < 1)
    throw std::invalid_argument("precision_bound: inputs out of range");
  if (sigma_b > 0.0 && delta_p_um == 0.0)
    throw std::invalid_argument("precision_bound: background needs a finite pixel aperture");
  const double kappa = emccd ? 2.0 : 1.0;
  const double s2 = rms_psf_um * rms_psf_um;
  const double shot = (kappa * s2 + delta_p_um * delta_p_um / 12.0) / n_photons;
  const double bg = sigma_b == 0.0 ? 0.0
                                   : 4.0 * std::sqrt(std::numbers::pi) * s2 * rms_psf_um * sigma_b * sigma_b *
                                         n_perp / (delta_p_um * n_photons * n_photons);
  return std::sqrt(shot + bg);
}

}  // namespace atomloc::loc
