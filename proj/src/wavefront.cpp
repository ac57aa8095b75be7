#include "atomloc/wavefront.hpp"

#include "atomloc/defaults.hpp"
#include "atomloc/fft.hpp"
#include "atomloc/optim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace atomloc::wavefront {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;

double ZernikeWavefront::coeff(ZernikeIndex t) const {
  const auto it = coeffs.find(t);
  return it == coeffs.end() ? 0.0 : it->second;
}

double ZernikeWavefront::angle(ZernikeIndex t) const {
  const auto it = angles.find(t);
  return it == angles.end() ? 0.0 : it->second;
}

double ZernikeWavefront::rms_error() const {
  double s = 0.0;
  for (const auto& [t, c] : coeffs)
    if (t.first > 1) s += c * c;  // piston and tilt carry no wavefront error
  return std::sqrt(s);
}

void ZernikeWavefront::validate() const {
  if (!(na > 0.0 && na < 1.0)) throw std::invalid_argument("ZernikeWavefront: NA outside (0, 1)");
  if (!(lambda_nm > 0.0)) throw std::invalid_argument("ZernikeWavefront: wavelength must be positive");
  for (const auto& [t, c] : coeffs) {
    const auto [n, m] = t;
    if (n < 0 || n > 4 || m < 0 || m > n || (n - m) % 2 != 0)
      throw std::invalid_argument("ZernikeWavefront: unsupported Zernike index");
    if (!std::isfinite(c)) throw std::invalid_argument("ZernikeWavefront: non-finite coefficient");
  }
}

ZernikeWavefront ZernikeWavefront::reference_objective() {
  ZernikeWavefront w;
  w.coeffs = {{kDefocus, 0.016}, {kAstigmatism, 0.048}, {kComa, -0.007}, {kTrefoil, -0.025},
              {kSpherical, 0.013}};
  w.na = defaults::kNumericalAperture;
  w.lambda_nm = defaults::kFluorescenceWavelengthNm;
  return w;
}

namespace {

double radial(int n, int m, double r) {
  const double r2 = r * r;
  switch (n * 10 + m) {
    case 0: return 1.0;
    case 11: return r;
    case 20: return 2.0 * r2 - 1.0;
    case 22: return r2;
    case 31: return (3.0 * r2 - 2.0) * r;
    case 33: return r2 * r;
    case 40: return 6.0 * r2 * r2 - 6.0 * r2 + 1.0;
    case 42: return (4.0 * r2 - 3.0) * r2;
    case 44: return r2 * r2;
    default: throw std::invalid_argument("zernike: unsupported index");
  }
}

struct PupilGeometry {
  int n = 0;
  std::vector<int> ix, iy;  // masked points
  std::vector<double> rho, theta;
};

std::shared_ptr<const PupilGeometry> pupil_geometry(int n) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const PupilGeometry>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) {
    auto g = std::make_shared<PupilGeometry>();
    g->n = n;
    for (int j = 0; j < n; ++j) {
      const double v = (j + 0.5 - 0.5 * n) * 2.0 / n;
      for (int i = 0; i < n; ++i) {
        const double u = (i + 0.5 - 0.5 * n) * 2.0 / n;
        const double r = std::hypot(u, v);
        if (r > 1.0) continue;
        g->ix.push_back(i);
        g->iy.push_back(j);
        g->rho.push_back(r);
        g->theta.push_back(std::atan2(v, u));
      }
    }
    slot = g;
  }
  return slot;
}

// Row-major n x n pupil field, zero outside the aperture.
std::vector<cplx> pupil_field(const ZernikeWavefront& w, const PupilGeometry& g) {
  std::vector<cplx> p(static_cast<std::size_t>(g.n) * g.n, 0.0);
  for (std::size_t k = 0; k < g.rho.size(); ++k) {
    double phase = 0.0;
    for (const auto& [t, c] : w.coeffs)
      if (c != 0.0) phase += c * zernike(t, g.rho[k], g.theta[k], w.angle(t));
    p[static_cast<std::size_t>(g.iy[k]) * g.n + g.ix[k]] = std::polar(1.0, 2.0 * kPi * phase);
  }
  return p;
}

struct LsfSpectrum {
  double df = 0.0;          // cycles/um
  std::vector<cplx> otf;    // bins 0..n, otf[0] == 1
};

constexpr int kPad = 4;

LsfSpectrum lsf_spectrum(const ZernikeWavefront& w) {
  w.validate();
  if (w.pupil_grid < 256) throw std::invalid_argument("lsf_from_wavefront: pupil grid too coarse (< 256)");
  const int n = w.pupil_grid;
  const auto geo = pupil_geometry(n);
  const auto p = pupil_field(w, *geo);
  const std::size_t m = static_cast<std::size_t>(kPad) * n;
  fft::Plan1d plan(m, true);
  std::vector<double> acc(m, 0.0);
  double pupil_energy = 0.0;
  for (int j = 0; j < n; ++j) {
    const cplx* row = &p[static_cast<std::size_t>(j) * n];
    double re = 0.0;
    for (int i = 0; i < n; ++i) re += std::norm(row[i]);
    if (re == 0.0) continue;
    pupil_energy += re;
    auto in = plan.input();
    std::fill(in.begin(), in.end(), cplx{0.0, 0.0});
    std::copy(row, row + n, in.begin());
    plan.execute();
    const auto out = plan.output();
    // image coordinate x_k = k dx corresponds to bin -k of the forward transform
    for (std::size_t k = 0; k < m; ++k) acc[k] += std::norm(out[(m - k) % m]);
  }
  double total = 0.0;
  for (double v : acc) total += v;
  const double residual = std::abs(total / (static_cast<double>(m) * pupil_energy) - 1.0);
  if (residual > 1e-4) throw std::runtime_error("lsf_from_wavefront: energy not conserved, grid too coarse");
  const auto spec = fft::forward(std::span<const double>(acc));
  const double dx = w.abbe_radius_um() / kPad;
  LsfSpectrum out;
  out.df = 1.0 / (static_cast<double>(m) * dx);
  out.otf.resize(static_cast<std::size_t>(n) + 1);
  for (int j = 0; j <= n; ++j) out.otf[static_cast<std::size_t>(j)] = spec[static_cast<std::size_t>(j)] / total;
  return out;
}

// Density per um at x_um, with an optional pixel aperture.
double evaluate(const LsfSpectrum& sp, double x_um, double delta_p_um) {
  const cplx z = std::polar(1.0, 2.0 * kPi * sp.df * x_um);
  cplx zj = 1.0;
  double acc = 0.5 * sp.otf[0].real();
  for (std::size_t j = 1; j < sp.otf.size(); ++j) {
    zj *= z;
    double t = 1.0;
    if (delta_p_um > 0.0) {
      const double a = kPi * sp.df * static_cast<double>(j) * delta_p_um;
      t = std::sin(a) / a;
    }
    acc += t * (sp.otf[j] * zj).real();
  }
  return 2.0 * sp.df * acc;
}

double pitch(double delta_s_um) { return delta_s_um > 0.0 ? delta_s_um : defaults::kSamplingSpacingUm; }

// Complex image-plane amplitude by direct summation, separable over pupil rows.
cplx field_at(const std::vector<cplx>& p, int n, double kx, double ky) {
  std::vector<cplx> ex(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ex[static_cast<std::size_t>(i)] = std::polar(1.0, 2.0 * kPi * kx * (i + 0.5 - 0.5 * n) * 2.0 / n);
  cplx acc = 0.0;
  for (int j = 0; j < n; ++j) {
    cplx row = 0.0;
    const cplx* pr = &p[static_cast<std::size_t>(j) * n];
    for (int i = 0; i < n; ++i)
      if (pr[i] != cplx{0.0, 0.0}) row += pr[i] * ex[static_cast<std::size_t>(i)];
    acc += row * std::polar(1.0, 2.0 * kPi * ky * (j + 0.5 - 0.5 * n) * 2.0 / n);
  }
  return acc;
}

}  // namespace

double zernike(ZernikeIndex t, double rho, double theta, double angle) {
  const auto [n, m] = t;
  const double norm = (m == 0) ? std::sqrt(n + 1.0) : std::sqrt(2.0 * (n + 1.0));
  const double az = (m == 0) ? 1.0 : std::cos(m * (theta - angle));
  return norm * radial(n, m, rho) * az;
}

ResponseLsf lsf_from_wavefront(const ZernikeWavefront& w, const LsfSampling& sampling) {
  if (sampling.s < 1) throw std::invalid_argument("lsf_from_wavefront: s must be >= 1");
  const double ds = pitch(sampling.delta_s_um);
  const auto sp = lsf_spectrum(w);
  const auto half = static_cast<long>(std::ceil(sampling.half_width_px * sampling.s));
  std::vector<double> v(static_cast<std::size_t>(2 * half + 1));
  for (long j = -half; j <= half; ++j) {
    const double x_px = static_cast<double>(j) / sampling.s;
    v[static_cast<std::size_t>(j + half)] = evaluate(sp, (x_px - sampling.shift_px) * ds, sampling.delta_p_um);
  }
  return ResponseLsf(std::move(v), sampling.s, ds, -static_cast<double>(half) / sampling.s);
}

double psf_relative(const ZernikeWavefront& w, double x_um, double y_um) {
  w.validate();
  const int n = w.pupil_grid;
  const auto geo = pupil_geometry(n);
  const auto p = pupil_field(w, *geo);
  const double scale = w.na / (w.lambda_nm * 1e-3);
  const double ideal = static_cast<double>(geo->rho.size());
  return std::norm(field_at(p, n, scale * x_um, scale * y_um)) / (ideal * ideal);
}

StrehlResult strehl_and_rms(const ZernikeWavefront& w) {
  w.validate();
  StrehlResult res;
  res.rms_error = w.rms_error();
  const int n = w.pupil_grid;
  const auto geo = pupil_geometry(n);
  const auto p = pupil_field(w, *geo);
  const double ideal = static_cast<double>(geo->rho.size());
  // Coarse peak search on a 2x padded grid, then local refinement by direct summation.
  const std::size_t m = 2 * static_cast<std::size_t>(n);
  std::vector<cplx> buf(m * m, 0.0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      buf[static_cast<std::size_t>(j) * m + i] = p[static_cast<std::size_t>(j) * n + i];
  const auto spec = fft::forward_2d(buf, m, m);
  std::size_t best = 0;
  for (std::size_t k = 1; k < spec.size(); ++k)
    if (std::norm(spec[k]) > std::norm(spec[best])) best = k;
  const double dk = static_cast<double>(n) / (2.0 * static_cast<double>(m));  // pupil-frequency step
  const long bx = fft::signed_index(best % m, m), by = fft::signed_index(best / m, m);
  std::vector<double> x0 = {-static_cast<double>(bx) * dk, -static_cast<double>(by) * dk};
  auto f = [&](std::span<const double> q) { return -std::norm(field_at(p, n, q[0], q[1])); };
  const double scale[] = {0.25 * dk, 0.25 * dk};
  optim::NelderMeadOptions nmo;
  nmo.max_evaluations = 300;
  nmo.f_tolerance = 1e-13;
  const auto r = optim::nelder_mead(f, x0, scale, nmo);
  res.strehl = -r.value / (ideal * ideal);
  const double to_um = w.lambda_nm * 1e-3 / w.na;
  res.peak_x_um = r.x[0] * to_um;
  res.peak_y_um = r.x[1] * to_um;
  return res;
}

Mtf mtf_of(const ResponseLsf& lsf, std::size_t n_samples) {
  if (lsf.empty()) throw std::invalid_argument("mtf_of: empty LSF");
  if (n_samples < 2) throw std::invalid_argument("mtf_of: need at least 2 samples");
  Mtf out;
  const double zero = std::abs(lsf.otf(0.0));
  out.bin_per_um = 1.0 / (static_cast<double>(n_samples) * lsf.delta_s());
  for (std::size_t k = 0; k <= n_samples / 2; ++k) {
    const double kpx = static_cast<double>(k) / static_cast<double>(n_samples);
    const double v = (k == 0) ? 1.0 : std::abs(lsf.otf(kpx)) / zero;
    out.freq_per_um.push_back(static_cast<double>(k) * out.bin_per_um);
    out.values.push_back(v);
    if (v > 1e-3) out.cutoff_per_um = out.freq_per_um.back();
  }
  return out;
}

TransferFunctions transfer_functions(const ZernikeWavefront& w, const LsfSampling& sampling) {
  TransferFunctions tf;
  tf.lsf = lsf_from_wavefront(w, sampling);
  tf.mtf = mtf_of(tf.lsf);
  const auto sr = strehl_and_rms(w);
  tf.strehl = sr.strehl;
  tf.rms_error = sr.rms_error;
  return tf;
}

namespace {

// Minimum-norm split of the identifiable quadratic combination into defocus and astigmatism.
constexpr double kQuadNorm = 18.0;  // (2 sqrt3)^2 + sqrt6^2
double defocus_share(double q) { return q * 2.0 * std::sqrt(3.0) / kQuadNorm; }
double astig_share(double q) { return q * std::sqrt(6.0) / kQuadNorm; }

ZernikeWavefront from_params(std::span<const double> p, const FitOptions& opt) {
  ZernikeWavefront w;
  w.coeffs = {{kDefocus, defocus_share(p[0])}, {kAstigmatism, astig_share(p[0])},
              {kComa, p[1]}, {kTrefoil, p[2]}, {kSpherical, p[3]}};
  w.na = p[4];
  w.lambda_nm = opt.lambda_nm;
  w.pupil_grid = opt.pupil_grid;
  return w;
}

}  // namespace

WavefrontFitReport fit_wavefront(const ResponseLsf& measured, const FitOptions& opt) {
  if (measured.empty()) throw std::invalid_argument("fit_wavefront: empty LSF");
  const double ds = measured.delta_s();
  const std::size_t nm = measured.samples().size();
  std::vector<double> xs(nm), ys(nm);
  for (std::size_t j = 0; j < nm; ++j) {
    xs[j] = measured.x_at(j);
    ys[j] = measured.samples()[j] * ds;
  }
  const double r_a_px = opt.lambda_nm * 1e-3 / (2.0 * defaults::kNumericalAperture) / ds;
  if (std::min(-measured.x0(), measured.x_end()) < 5.0 * r_a_px * 0.9)
    throw std::invalid_argument("fit_wavefront: measured LSF must cover +-5 Abbe radii");

  // NA from the MTF cutoff of the measurement.
  const auto mtf = mtf_of(measured, 2048);
  double na0 = mtf.cutoff_per_um * opt.lambda_nm * 1e-3 / 2.0;
  if (!(na0 > 0.05 && na0 < 0.95)) na0 = defaults::kNumericalAperture;

  // params: quadratic combination, coma, trefoil, spherical, NA, shift (px), scale
  optim::LeastSquaresProblem prob;
  prob.n_residuals = nm;
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    const auto w = from_params(p, opt);
    const auto sp = lsf_spectrum(w);
    for (std::size_t j = 0; j < nm; ++j)
      r[j] = p[6] * evaluate(sp, (xs[j] - p[5]) * ds, opt.delta_p_um) * ds - ys[j];
  };
  const std::vector<double> lo = {-1.0, -0.5, -0.5, -0.5, 0.02, measured.x0(), 0.5};
  const std::vector<double> hi = {1.0, 0.5, 0.5, 0.5, 0.98, measured.x_end(), 2.0};

  const double c0 = measured.centroid_px();
  const double starts[][2] = {{0.1, 0.02}, {0.1, -0.02}, {0.02, 0.01}};
  optim::LmOptions lmo;
  lmo.max_iterations = opt.max_iterations;
  lmo.relative_cost_tolerance = 1e-12;
  optim::LmResult best;
  best.cost = std::numeric_limits<double>::infinity();
  for (const auto& s : starts) {
    const auto r = optim::levenberg_marquardt(prob, {s[0], 0.0, 0.0, s[1], na0, c0, 1.0}, lo, hi, lmo);
    if (r.cost < best.cost) best = r;
  }

  WavefrontFitReport rep;
  auto p = best.params;
  // Even terms only fix the LSF up to a common sign.
  const double evens[] = {defocus_share(p[0]), astig_share(p[0]), p[3]};
  const double* big = std::max_element(evens, evens + 3, [](double a, double b) { return std::abs(a) < std::abs(b); });
  const bool flip = *big < 0.0;
  if (flip) {
    p[0] = -p[0];
    p[3] = -p[3];
  }
  rep.wavefront = from_params(p, opt);
  rep.shift_px = p[5];
  rep.iterations = best.iterations;
  rep.converged = best.converged;
  rep.residual_norm = std::sqrt(best.cost);
  rep.quadratic_combination = p[0];

  const double dof = std::max(1.0, static_cast<double>(nm) - 7.0);
  const double s2 = best.cost / dof;
  auto err = [&](int i) {
    if (best.covariance.rows() <= i) return std::numeric_limits<double>::quiet_NaN();
    const double v = best.covariance(i, i) * s2;
    return v >= 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
  };
  rep.quadratic_combination_err = err(0);
  rep.coeff_err[kDefocus] = defocus_share(err(0));
  rep.coeff_err[kAstigmatism] = astig_share(err(0));
  rep.coeff_err[kComa] = err(1);
  rep.coeff_err[kTrefoil] = err(2);
  rep.coeff_err[kSpherical] = err(3);
  rep.na_err = err(4);
  rep.flags.push_back("defocus/astigmatism degenerate: split by minimum norm");
  if (flip) rep.flags.push_back("even-term sign canonicalized");
  for (std::size_t i = 0; i < best.at_bound.size(); ++i)
    if (best.at_bound[i]) rep.flags.push_back("parameter " + std::to_string(i) + " at bound");
  if (!best.converged) rep.flags.push_back("not converged: " + best.message);

  if (opt.angle_scan_points > 0) {
    for (ZernikeIndex t : {kAstigmatism, kComa, kTrefoil}) {
      AngleScan scan;
      scan.term = t;
      double min_cost = std::numeric_limits<double>::infinity();
      for (int k = 0; k < opt.angle_scan_points; ++k) {
        const double a = 2.0 * kPi / t.second * k / opt.angle_scan_points;
        auto w = rep.wavefront;
        w.angles[t] = a;
        const auto sp = lsf_spectrum(w);
        double c = 0.0;
        for (std::size_t j = 0; j < nm; ++j) {
          const double r = p[6] * evaluate(sp, (xs[j] - p[5]) * ds, opt.delta_p_um) * ds - ys[j];
          c += r * r;
        }
        scan.angles.push_back(a);
        scan.costs.push_back(c);
        min_cost = std::min(min_cost, c);
      }
      double amin = std::numeric_limits<double>::infinity(), amax = -amin;
      for (std::size_t k = 0; k < scan.angles.size(); ++k)
        if (scan.costs[k] <= 2.0 * min_cost + 1e-30) {
          amin = std::min(amin, scan.angles[k]);
          amax = std::max(amax, scan.angles[k]);
        }
      scan.spread = amax - amin;
      rep.angle_scans.push_back(std::move(scan));
    }
  }
  return rep;
}

}  // namespace atomloc::wavefront
