#include "atomloc/response.hpp"

#include "atomloc/fft.hpp"
#include "atomloc/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace atomloc {

ResponseLsf::ResponseLsf(std::vector<double> samples, int s, double delta_s_um, double x0_px,
                         std::optional<std::string> patch_id)
    : samples_(std::move(samples)), s_(s), delta_s_(delta_s_um), x0_(x0_px),
      patch_id_(std::move(patch_id)) {
  if (s_ < 1) throw std::invalid_argument("ResponseLsf: upsampling factor must be >= 1");
  if (!(delta_s_ > 0.0) || !std::isfinite(delta_s_))
    throw std::invalid_argument("ResponseLsf: delta_s must be positive");
  if (samples_.size() < 4) throw std::invalid_argument("ResponseLsf: need at least 4 samples");
  if (!std::isfinite(x0_)) throw std::invalid_argument("ResponseLsf: non-finite origin");
  double sum = 0.0;
  for (double v : samples_) {
    if (!std::isfinite(v)) throw std::invalid_argument("ResponseLsf: non-finite sample");
    sum += v;
  }
  const double a = sum * delta_s_ / s_;
  if (!(std::abs(a) > 0.0)) throw std::invalid_argument("ResponseLsf: zero area");
  for (double& v : samples_) v /= a;
  rebuild_tables();
}

void ResponseLsf::rebuild_tables() {
  const std::size_t n = samples_.size();
  density_.resize(n);
  for (std::size_t j = 0; j < n; ++j) density_[j] = samples_[j] * delta_s_;
  slope_.resize(n);
  const double h = 1.0 / s_;
  auto f = [&](long j) {
    return (j < 0 || j >= static_cast<long>(n)) ? 0.0 : density_[static_cast<std::size_t>(j)];
  };
  for (long j = 0; j < static_cast<long>(n); ++j)
    slope_[static_cast<std::size_t>(j)] =
        (-f(j + 2) + 8.0 * f(j + 1) - 8.0 * f(j - 1) + f(j - 2)) / (12.0 * h);
}

double ResponseLsf::area() const {
  double sum = 0.0;
  for (double v : samples_) sum += v;
  return sum * delta_s_ / s_;
}

double ResponseLsf::operator()(double x) const {
  if (samples_.empty()) return 0.0;
  const double t = (x - x0_) * s_;
  if (t < 0.0 || t > static_cast<double>(samples_.size() - 1)) return 0.0;
  auto j = static_cast<std::size_t>(t);
  if (j >= samples_.size() - 1) j = samples_.size() - 2;
  const double u = t - static_cast<double>(j);
  const double h = 1.0 / s_;
  const double u2 = u * u, u3 = u2 * u;
  return (2 * u3 - 3 * u2 + 1) * density_[j] + (u3 - 2 * u2 + u) * h * slope_[j] +
         (-2 * u3 + 3 * u2) * density_[j + 1] + (u3 - u2) * h * slope_[j + 1];
}

double ResponseLsf::derivative(double x) const {
  if (samples_.empty()) return 0.0;
  const double t = (x - x0_) * s_;
  if (t < 0.0 || t > static_cast<double>(samples_.size() - 1)) return 0.0;
  auto j = static_cast<std::size_t>(t);
  if (j >= samples_.size() - 1) j = samples_.size() - 2;
  const double u = t - static_cast<double>(j);
  const double h = 1.0 / s_;
  const double u2 = u * u;
  const double d = (6 * u2 - 6 * u) * density_[j] + (3 * u2 - 4 * u + 1) * h * slope_[j] +
                   (-6 * u2 + 6 * u) * density_[j + 1] + (3 * u2 - 2 * u) * h * slope_[j + 1];
  return d / h;
}

std::complex<double> ResponseLsf::otf(double k) const {
  std::complex<double> acc{0.0, 0.0};
  const double h = 1.0 / s_;
  for (std::size_t j = 0; j < density_.size(); ++j) {
    const double phase = -2.0 * std::numbers::pi * k * x_at(j);
    acc += density_[j] * std::complex<double>(std::cos(phase), std::sin(phase));
  }
  return acc * h;
}

double ResponseLsf::peak() const {
  return density_.empty() ? 0.0 : *std::max_element(density_.begin(), density_.end());
}

double ResponseLsf::fwhm_px() const {
  if (density_.empty()) return 0.0;
  const auto imax = static_cast<std::size_t>(
      std::max_element(density_.begin(), density_.end()) - density_.begin());
  const double half = 0.5 * density_[imax];
  double left = x_at(0), right = x_end();
  for (std::size_t j = imax; j > 0; --j) {
    if (density_[j - 1] < half) {
      const double f = (half - density_[j - 1]) / (density_[j] - density_[j - 1]);
      left = x_at(j - 1) + f / s_;
      break;
    }
  }
  for (std::size_t j = imax; j + 1 < density_.size(); ++j) {
    if (density_[j + 1] < half) {
      const double f = (density_[j] - half) / (density_[j] - density_[j + 1]);
      right = x_at(j) + f / s_;
      break;
    }
  }
  return right - left;
}

double ResponseLsf::centroid_px() const {
  double m0 = 0.0, m1 = 0.0;
  for (std::size_t j = 0; j < density_.size(); ++j) {
    m0 += density_[j];
    m1 += density_[j] * x_at(j);
  }
  return m1 / m0;
}

ResponseLsf gaussian_lsf(double sigma_px, int s, double delta_s_um, double half_width_px) {
  if (!(sigma_px > 0.0)) throw std::invalid_argument("gaussian_lsf: sigma must be positive");
  const auto half = static_cast<std::size_t>(std::ceil(half_width_px * s));
  const std::size_t n = 2 * half + 1;
  const double x0 = -static_cast<double>(half) / s;
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double x = x0 + static_cast<double>(j) / s;
    v[j] = std::exp(-0.5 * x * x / (sigma_px * sigma_px));
  }
  return ResponseLsf(std::move(v), s, delta_s_um, x0);
}

ResponseLsf pixel_convolve(const ResponseLsf& optical, double delta_p_um) {
  if (!(delta_p_um > 0.0)) return optical;
  const int s = optical.upsampling();
  const double w = delta_p_um / optical.delta_s();  // aperture width in pixels
  const auto pad = static_cast<std::size_t>(std::ceil(0.5 * w * s)) + 2;
  const std::size_t len = optical.samples().size() + 2 * pad;
  std::size_t n = 1;
  while (n < 2 * len) n <<= 1;
  std::vector<fft::cplx> buf(n, 0.0);
  for (std::size_t j = 0; j < optical.samples().size(); ++j) buf[pad + j] = optical.samples()[j];
  auto spec = fft::forward(buf);
  const double h = 1.0 / s;
  for (std::size_t j = 0; j < n; ++j) {
    const double k = static_cast<double>(fft::signed_index(j, n)) / (static_cast<double>(n) * h);
    const double arg = std::numbers::pi * k * w;
    spec[j] *= (std::abs(arg) < 1e-12) ? 1.0 : std::sin(arg) / arg;
  }
  auto back = fft::inverse(spec);
  std::vector<double> out(len);
  for (std::size_t j = 0; j < len; ++j) out[j] = back[j].real();
  return ResponseLsf(std::move(out), s, optical.delta_s(),
                     optical.x0() - static_cast<double>(pad) / s, optical.patch_id());
}

ResponseLsf gaussian_substitute(const ResponseLsf& lsf) {
  const auto& d = lsf.samples();
  const std::size_t n = d.size();
  const double scale = lsf.delta_s();
  const double c0 = lsf.centroid_px();
  const double fw = lsf.fwhm_px();
  optim::LeastSquaresProblem prob;
  prob.n_residuals = n;
  prob.residuals = [&](std::span<const double> p, std::span<double> r) {
    const double mu = p[0], sig = std::abs(p[1]);
    for (std::size_t j = 0; j < n; ++j) {
      const double x = lsf.x_at(j) - mu;
      const double g = std::exp(-0.5 * x * x / (sig * sig)) / (std::sqrt(2.0 * std::numbers::pi) * sig);
      r[j] = d[j] * scale - g;
    }
  };
  auto res = optim::levenberg_marquardt(prob, {c0, fw / 2.3548});
  const double mu = res.params[0], sig = std::abs(res.params[1]);
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double x = lsf.x_at(j) - mu;
    v[j] = std::exp(-0.5 * x * x / (sig * sig));
  }
  return ResponseLsf(std::move(v), lsf.upsampling(), lsf.delta_s(), lsf.x0(), lsf.patch_id());
}

}  // namespace atomloc
