#pragma once

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace atomloc {

/**
 * One-dimensional response function sampled on a sub-pixel grid.
 *
 * Samples are stored in 1/um so that sum(samples) * delta_s / s == 1. Sample j sits at pixel
 * coordinate x0 + j / s. Evaluation through operator() returns the density per pixel
 * (delta_s * L), so summing it over integer pixel offsets gives ~1 for a well-sampled LSF.
 * Between samples the function is evaluated by cubic Hermite interpolation with
 * fourth-order finite-difference slopes; outside the support it is zero.
 */
class ResponseLsf {
 public:
  ResponseLsf() = default;
  /// Normalizes `samples` to unit area. Throws on s < 1, empty or non-finite input, or zero area.
  ResponseLsf(std::vector<double> samples, int s, double delta_s_um, double x0_px,
              std::optional<std::string> patch_id = std::nullopt);

  std::span<const double> samples() const { return samples_; }
  int upsampling() const { return s_; }
  double delta_s() const { return delta_s_; }
  double x0() const { return x0_; }
  double x_end() const { return x0_ + static_cast<double>(samples_.size() - 1) / s_; }
  double x_at(std::size_t j) const { return x0_ + static_cast<double>(j) / s_; }
  const std::optional<std::string>& patch_id() const { return patch_id_; }
  void set_patch_id(std::optional<std::string> id) { patch_id_ = std::move(id); }
  bool empty() const { return samples_.empty(); }

  /// Area in physical units; 1 up to rounding after construction.
  double area() const;

  /// Density per pixel at pixel coordinate x.
  double operator()(double x_px) const;
  double derivative(double x_px) const;
  /// Continuous Fourier transform of the per-pixel density at k cycles/pixel (exp(-2 pi i k x)).
  std::complex<double> otf(double k_per_px) const;
  /// Maximum of the per-pixel density over the sample grid.
  double peak() const;
  /// Full width at half maximum in pixels, from linear interpolation of the samples.
  double fwhm_px() const;
  /// First moment in pixels.
  double centroid_px() const;

 private:
  void rebuild_tables();

  std::vector<double> samples_;
  std::vector<double> density_;  // delta_s * samples
  std::vector<double> slope_;    // d density / dx (per pixel)
  int s_ = 1;
  double delta_s_ = 1.0;
  double x0_ = 0.0;
  std::optional<std::string> patch_id_;
};

/// Unit-area Gaussian of rms width sigma_px, sampled over +-half_width_px.
ResponseLsf gaussian_lsf(double sigma_px, int s, double delta_s_um, double half_width_px);

/// Convolution with the pixel aperture (box of width delta_p / delta_s pixels), done in Fourier space.
ResponseLsf pixel_convolve(const ResponseLsf& optical, double delta_p_um);

/// Least-squares Gaussian approximation of an arbitrary LSF (same grid and centroid-fitted center).
ResponseLsf gaussian_substitute(const ResponseLsf& lsf);

}  // namespace atomloc
