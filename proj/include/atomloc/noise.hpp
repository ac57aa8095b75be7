#pragma once

#include "atomloc/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace atomloc::noise {

/**
 * Parameters of all stochastic channels. Rates are Poisson means in electrons per pixel per
 * exposure; sigma_ro is the read-out RMS before division by the gain.
 */
struct NoiseParams {
  double sigma_b = 0.6;
  double c1 = 1.4142135623730951;
  double c2 = 0.0;
  double g = 1000.0;
  double sigma_ro = 30.0;
  double cic_rate = 0.0;
  double dark_rate = 0.0;
  double stray_rate = 0.0;
  /// Excess noise factor of the EM register; 1 turns the stochastic register off.
  double excess_factor = 1.4142135623730951;
  /// Fractional laser-intensity fluctuation (per exposure) and photo-response non-uniformity.
  double intensity_noise = 0.0;
  double prnu = 0.0;

  /// Defaults of the reference camera: sigma_b = 0.6 e-/pixel, read-out 0.03 e-, c2 = 0.
  static NoiseParams reference_camera();
  /// Shot noise only: no background, no read-out noise.
  static NoiseParams shot_noise_only(double g = 1000.0);

  /// RMS background implied by the channel rates, F^2 (stray + dark + cic) + (sigma_ro / g)^2.
  double implied_sigma_b() const;
  void validate() const;
};

/// sqrt(sigma_b^2 + c1^2 S + c2^2 S^2) for one detector pixel.
double sigma_model(double signal, const NoiseParams& p);

/// Variance of one transverse-integrated pixel that sums n_perp detector pixels.
double profile_variance(double signal, const NoiseParams& p, int n_perp);

/// Fit weight variance: profile_variance floored at the shot noise of one photoelectron, so pixels
/// whose model vanishes cannot dominate chi-square when the background is zero.
double fit_variance(double signal, const NoiseParams& p, int n_perp);
/// Quadrature sum of all channels for one detector pixel.
double total_variance(double signal, const NoiseParams& p);

struct BackgroundFitReport {
  double sigma_b = 0.0;
  double g = 0.0;
  double spurious_rate = 0.0;  // all Poisson electrons (CIC, dark, stray) per pixel
  double sigma_ro = 0.0;
  double g_err = 0.0;
  double spurious_rate_err = 0.0;
  double sigma_ro_err = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  std::size_t n_samples = 0;
  double bin_width = 0.1;
  std::vector<double> likelihood_trace;
};

/**
 * Maximum-likelihood fit of the compound background law: Poisson spurious electrons amplified
 * with the gamma gain density, plus normal read-out noise. `samples` are in photoelectron units
 * produced by dividing raw output electrons by `conversion_gain`. When the spurious electrons do
 * not improve the likelihood significantly the read-out-only law is reported (rate 0, gain left at
 * `conversion_gain` with infinite error).
 */
BackgroundFitReport fit_background_histogram(std::span<const double> samples,
                                             double conversion_gain, double bin_width = 0.1);

/// Probability mass of the compound law on [lo, hi) in photoelectron units.
double background_bin_probability(double lo, double hi, double spurious_rate, double gain_ratio,
                                  double sigma_ro_e);

struct SnrBin {
  double mean_signal = 0.0;
  double rms_noise = 0.0;
  double rms_stderr = 0.0;
  std::size_t count = 0;
};

struct SnrCurve {
  std::vector<SnrBin> bins;
};

/**
 * Per-pixel mean and standard deviation over each stack of co-registered frames, pooled and
 * binned on `bin_edges` of the mean signal minus `background_offset`. RMS per bin is the root of
 * the pooled variance; its standard error comes from the spread of the per-pixel variances.
 */
SnrCurve estimate_snr_curve(std::span<const std::vector<PixelImage>> stacks,
                            std::span<const double> bin_edges, double background_offset = 0.0);

}  // namespace atomloc::noise
