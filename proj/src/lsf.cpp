#include "atomloc/lsf.hpp"

#include "atomloc/defaults.hpp"
#include "atomloc/fft.hpp"
#include "atomloc/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace atomloc::lsf {

double default_cutoff() { return defaults::kLowpassFactor / defaults::abbe_radius_px(); }

Profile1D fourier_lowpass(const Profile1D& profile, double cutoff) {
  profile.validate();
  if (!(cutoff > 0.0)) throw std::invalid_argument("fourier_lowpass: cutoff must be positive");
  const std::size_t n = profile.size();
  auto spec = fft::forward(std::span<const double>(profile.values));
  for (std::size_t k = 0; k < n; ++k) {
    const double f = static_cast<double>(fft::signed_index(k, n)) / static_cast<double>(n);
    if (std::abs(f) > cutoff) spec[k] = 0.0;
  }
  const auto back = fft::inverse(spec);
  Profile1D out = profile;
  for (std::size_t i = 0; i < n; ++i) out.values[i] = back[i].real();
  return out;
}

std::vector<double> upsample(std::span<const double> values, int s) {
  if (s < 1) throw std::invalid_argument("upsample: s must be >= 1");
  if (values.empty()) throw std::invalid_argument("upsample: empty input");
  if (s == 1) return {values.begin(), values.end()};
  const std::size_t n = values.size();
  const std::size_t m = n * static_cast<std::size_t>(s);
  const auto spec = fft::forward(values);
  std::vector<fft::cplx> big(m, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const long sk = fft::signed_index(k, n);
    if (n % 2 == 0 && 2 * k == n) {
      // split the Nyquist bin over +-n/2
      big[n / 2] += 0.5 * spec[k];
      big[m - n / 2] += 0.5 * spec[k];
      continue;
    }
    big[sk >= 0 ? static_cast<std::size_t>(sk) : m - static_cast<std::size_t>(-sk)] = spec[k];
  }
  const auto back = fft::inverse(big);
  std::vector<double> out(m);
  for (std::size_t j = 0; j < m; ++j) out[j] = back[j].real() * static_cast<double>(s);
  return out;
}

namespace {

struct Window {
  long start = 0;               // parent-profile index of window pixel 0
  std::vector<double> filtered; // low-passed pixel values
  std::vector<double> fine;     // upsampled low-passed values
};

Window cut_window(const Profile1D& p, long half, double cutoff, int s, double isolation_ratio,
                  double abbe_px) {
  const auto filtered_full = fourier_lowpass(p, cutoff);
  const auto& v = filtered_full.values;
  const auto peak_it = std::max_element(v.begin(), v.end());
  if (!(*peak_it > 0.0)) throw std::invalid_argument("reconstruct_lsf: profile without a positive peak");
  const long ip = static_cast<long>(peak_it - v.begin());
  Window w;
  w.start = ip - half;
  Profile1D win;
  win.values.assign(static_cast<std::size_t>(2 * half + 1), 0.0);
  for (long i = 0; i < 2 * half + 1; ++i) {
    const long src = w.start + i;
    if (src >= 0 && src < static_cast<long>(p.size()))
      win.values[static_cast<std::size_t>(i)] = p.values[static_cast<std::size_t>(src)];
  }
  auto lp = fourier_lowpass(win, cutoff);
  const double peak = lp.values[static_cast<std::size_t>(half)];
  for (long i = 0; i < 2 * half + 1; ++i) {
    if (std::abs(static_cast<double>(i - half)) <= 4.0 * abbe_px) continue;
    if (lp.values[static_cast<std::size_t>(i)] > isolation_ratio * peak)
      throw std::invalid_argument("reconstruct_lsf: profile fails the isolation check");
  }
  w.filtered = std::move(lp.values);
  w.fine = upsample(w.filtered, s);
  return w;
}

struct FitOut {
  double amplitude;
  double position;  // window coordinates
};

FitOut fit_guess(const std::vector<double>& d, const ResponseLsf& g, double abbe_px) {
  const std::size_t n = d.size();
  const double centre = 0.5 * static_cast<double>(n - 1);
  double m0 = 0.0, m1 = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sum += d[i];
    const double x = static_cast<double>(i);
    if (std::abs(x - centre) <= 2.0 * abbe_px && d[i] > 0.0) {
      m0 += d[i];
      m1 += d[i] * x;
    }
  }
  const double r0 = (m0 > 0.0 ? m1 / m0 : centre) - g.centroid_px();
  optim::LeastSquaresProblem prob;
  prob.n_residuals = n;
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    for (std::size_t i = 0; i < n; ++i) r[i] = d[i] - p[0] * g(static_cast<double>(i) - p[1]);
  };
  prob.jacobian = [&](std::span<const double> p, Eigen::MatrixXd& j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(i) - p[1];
      j(static_cast<Eigen::Index>(i), 0) = -g(x);
      j(static_cast<Eigen::Index>(i), 1) = p[0] * g.derivative(x);
    }
  };
  const auto res = optim::levenberg_marquardt(prob, {std::max(sum, 1e-12), r0});
  return {res.params[0], res.params[1]};
}

}  // namespace

ReconstructResult reconstruct_lsf(const std::vector<Profile1D>& profiles, const ReconstructOptions& opt) {
  if (profiles.empty()) throw std::invalid_argument("reconstruct_lsf: no profiles");
  if (opt.s < 1) throw std::invalid_argument("reconstruct_lsf: s must be >= 1");
  const double delta_s = opt.delta_s_um > 0.0 ? opt.delta_s_um : defaults::kSamplingSpacingUm;
  const double abbe_px = defaults::kAbbeRadiusUm / delta_s;
  const double cutoff = opt.cutoff > 0.0 ? opt.cutoff : default_cutoff();
  const long half = static_cast<long>(std::ceil(opt.window_abbe * abbe_px));
  const int s = opt.s;

  std::vector<Window> windows;
  windows.reserve(profiles.size());
  for (const auto& p : profiles) {
    p.validate();
    windows.push_back(cut_window(p, half, cutoff, s, opt.isolation_ratio, abbe_px));
  }

  ResponseLsf guess = opt.initial ? *opt.initial
                                  : gaussian_lsf(opt.initial_rms_um / delta_s, s, delta_s,
                                                 static_cast<double>(half));
  const long n_fine = 2 * half * s + 1;
  ReconstructResult out;
  std::vector<double> prev;
  for (int it = 0; it < opt.max_iters; ++it) {
    std::vector<double> acc(static_cast<std::size_t>(n_fine), 0.0);
    out.positions.clear();
    out.amplitudes.clear();
    out.applied_shifts.clear();
    for (const auto& w : windows) {
      const auto f = fit_guess(w.filtered, guess, abbe_px);
      const long shift = std::lround(f.position * s);
      out.positions.push_back(f.position + static_cast<double>(w.start));
      out.amplitudes.push_back(f.amplitude);
      out.applied_shifts.push_back(static_cast<double>(shift) / s + static_cast<double>(w.start));
      for (long j = 0; j < static_cast<long>(w.fine.size()); ++j) {
        const long t = j - shift + half * s;
        if (t >= 0 && t < n_fine) acc[static_cast<std::size_t>(t)] += w.fine[static_cast<std::size_t>(j)];
      }
    }
    guess = ResponseLsf(acc, s, delta_s, -static_cast<double>(half), guess.patch_id());
    std::vector<double> cur(guess.samples().begin(), guess.samples().end());
    out.iterations = it + 1;
    if (!prev.empty() && prev.size() == cur.size()) {
      double change = 0.0, peak = 0.0;
      for (std::size_t j = 0; j < cur.size(); ++j) {
        change = std::max(change, std::abs(cur[j] - prev[j]));
        peak = std::max(peak, std::abs(cur[j]));
      }
      out.change_trace.push_back(change / peak);
      if (change / peak < opt.tolerance) {
        out.converged = true;
        break;
      }
    }
    prev = std::move(cur);
  }
  out.lsf = guess;
  return out;
}

void LsfAtlas::add(std::pair<std::size_t, std::size_t> columns, ResponseLsf lsf) {
  if (columns.second <= columns.first) throw std::invalid_argument("LsfAtlas: empty column interval");
  for (const auto& [iv, _] : patches_)
    if (columns.first < iv.second && iv.first < columns.second)
      throw std::invalid_argument("LsfAtlas: overlapping intervals");
  patches_.emplace(columns, std::move(lsf));
}

const ResponseLsf& LsfAtlas::lookup(double column) const {
  for (const auto& [iv, l] : patches_)
    if (column >= static_cast<double>(iv.first) && column < static_cast<double>(iv.second)) return l;
  throw std::out_of_range("LsfAtlas: column " + std::to_string(column) + " outside the atlas");
}

LsfAtlas build_atlas(const std::vector<PatchProfiles>& patches, const ReconstructOptions& opt) {
  LsfAtlas atlas;
  for (std::size_t k = 0; k < patches.size(); ++k) {
    if (patches[k].profiles.empty())
      throw std::invalid_argument("build_atlas: patch " + std::to_string(k) + " has no profiles");
    auto r = reconstruct_lsf(patches[k].profiles, opt);
    r.lsf.set_patch_id("patch-" + std::to_string(k));
    atlas.add(patches[k].columns, std::move(r.lsf));
  }
  return atlas;
}

}  // namespace atomloc::lsf
