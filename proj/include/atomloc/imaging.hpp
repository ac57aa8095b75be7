#pragma once

#include "atomloc/noise.hpp"
#include "atomloc/response.hpp"
#include "atomloc/types.hpp"

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace atomloc::imaging {

using Rng = std::mt19937_64;

/// Deterministic stream for (seed, stream index), e.g. one per simulated frame.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

using Intensity = std::function<double(double x_px)>;

/// x -> sum_l A_l L(x - xi_l), in photoelectrons per pixel of length.
Intensity continuous_image(const AtomConfig& atoms, const ResponseLsf& lsf);

/**
 * Samples a continuous intensity on n_px pixels centred at i = 0 .. n_px - 1. Each value is the
 * mean of the intensity over the pixel aperture (width delta_p / delta_s pixels), computed with
 * 16-point Gauss-Legendre quadrature.
 */
Profile1D sample_to_ccd(const Intensity& intensity, double delta_s_um, double delta_p_um,
                        std::size_t n_px);

/// Stochastic EM register: gamma-distributed output for x >= 1 input electrons, 0 for x == 0.
double em_amplify(std::uint64_t electrons, double g, Rng& rng);

struct SimulationOptions {
  std::size_t cols = 512;
  std::size_t rows = 40;
  double exposure_s = 1.0;
  double delta_p_um = 16.0 / 55.0;
  /// Transverse (radial) RMS width of the fluorescence in rows; the row distribution only
  /// matters for read-out noise since Poisson and gamma sums are closed under addition.
  double transverse_sigma_rows = 6.0;
  /// Per-emitter probability of being lost at a uniform random time during the exposure.
  double loss_probability = 0.0;
  /// Fixed-pattern seed for photo-response non-uniformity.
  std::uint64_t prnu_seed = 0x5eed;
};

/// Expected fluorescence photoelectrons per detector pixel (no background).
std::vector<double> mean_fluorescence(const AtomConfig& atoms, const ResponseLsf& optical_lsf,
                                      const SimulationOptions& opt, double delta_s_um,
                                      double delta_p_um);

/**
 * Monte Carlo EMCCD frame. Per pixel: Poisson fluorescence, stray light, CIC and dark charge,
 * EM amplification of the summed electrons, normal read-out noise, division by g.
 * `optical_lsf` is the optical line spread function (the pixel aperture is applied here); its
 * delta_s sets the pixel pitch.
 */
PixelImage simulate_exposure(const AtomConfig& atoms, const ResponseLsf& optical_lsf,
                             const noise::NoiseParams& noise, const LatticeModel& lattice,
                             std::uint64_t seed, const SimulationOptions& opt = {});

/// Same as above but drawing from a caller-owned stream.
PixelImage simulate_exposure(const AtomConfig& atoms, const ResponseLsf& optical_lsf,
                             const noise::NoiseParams& noise, const LatticeModel& lattice,
                             Rng& rng, const SimulationOptions& opt = {});

/// Sums rows [row_begin, row_end) of every column.
Profile1D integrate_transverse(const PixelImage& img, std::size_t row_begin, std::size_t row_end);
Profile1D integrate_transverse(const PixelImage& img);

/// Half-open pixel interval on a profile.
using PixelRange = std::pair<std::size_t, std::size_t>;

/**
 * Subtracts the mean over `signal_free` pixels. Throws if the regions are empty or overlap any
 * interval of `rois`.
 */
Profile1D subtract_background(const Profile1D& profile, std::span<const PixelRange> signal_free,
                              std::span<const PixelRange> rois = {});

double estimate_baseline(const Profile1D& profile, std::span<const PixelRange> signal_free);

}  // namespace atomloc::imaging
