#pragma once

#include "atomloc/imaging.hpp"
#include "atomloc/noise.hpp"
#include "atomloc/response.hpp"
#include "atomloc/types.hpp"

#include <complex>
#include <optional>
#include <string>
#include <vector>

namespace atomloc::loc {

using imaging::PixelRange;

struct Roi {
  PixelRange range{0, 0};
  double integrated_e = 0.0;
  int atom_count = 0;
  double count_confidence = 0.0;
  bool accepted = false;
};

struct SegmentOptions {
  double threshold_sigma = 3.0;
  double dilation_px = 0.0;  // <= 0 selects one Abbe radius
  double cutoff = 0.0;       // low-pass before thresholding; <= 0 selects 1.2 / r_A
};

struct Segmentation {
  std::vector<Roi> rois;
  std::vector<PixelRange> signal_free;
};

/**
 * Thresholds the low-passed profile at threshold_sigma * sigma_b * sqrt(n_perp), dilates each
 * run by the Abbe radius and merges overlaps. ROIs carry the summed raw signal.
 */
Segmentation segment_rois(const Profile1D& profile, const noise::NoiseParams& noise,
                          const SegmentOptions& opt = {});

/// Baseline from the median, segmentation, then the mean of the signal-free pixels; repeated twice.
Profile1D auto_subtract_background(const Profile1D& raw, const noise::NoiseParams& noise,
                                   const SegmentOptions& opt = {}, Segmentation* seg_out = nullptr);

struct PhotonHistogramModel {
  double peak_spacing = 0.0;
  double w1 = 0.0;
  std::vector<double> peak_widths;  // m = 1..M
  std::vector<double> abundances;   // index 0: uniform background (loss), 1..M: m atoms
  double background_density = 0.0; // 1 / (hi - lo)
  double lo = 0.0, hi = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;

  int max_atoms() const { return static_cast<int>(peak_widths.size()); }
  /// Mixture density of hypothesis m at total x (m = 0 is the uniform component).
  double component(int m, double x) const;
  double posterior(int m, double x) const;
};

/// EM fit of equidistant Gaussian peaks (widths w1 sqrt(m)) plus a uniform background.
PhotonHistogramModel fit_photon_histogram(std::span<const double> totals, int max_atoms = 7,
                                          double spacing_hint = 0.0);

struct AcceptanceRegion {
  int m = 0;
  double lo = 0.0, hi = 0.0;
  double power = 0.0;       // P(R | H_m)
  double confidence = 0.0;  // P(H_m | R)
};

/// Widest posterior level sets per hypothesis with P(H_m | R) >= min_confidence, inside the
/// Bayes decision zone of m so that regions never overlap.
std::vector<AcceptanceRegion> acceptance_regions(const PhotonHistogramModel& model,
                                                 double min_confidence);

struct CountResult {
  int m = 0;
  double confidence = 0.0;
  bool accepted = false;
};

CountResult count_atoms(const Roi& roi, const PhotonHistogramModel& model, double min_confidence = 0.99);

struct WienerResult {
  std::vector<long> k;                          // signed DFT indices of the usable band
  std::vector<std::complex<double>> f;          // deconvolved spectrum on k
  std::vector<double> filter;                   // |OTF|^2 / (|OTF|^2 + 1/SNR)
  std::size_t n = 0;                            // transform length (ROI plus zero padding)
  std::size_t n_data = 0;                       // ROI length
};

struct WienerOptions {
  int iterations = 10;
  double band = 0.0;  // cycles/px; <= 0 selects 1.2 / r_A
  /// The ROI is zero-extended to at least this many pixels so the band holds enough samples.
  std::size_t min_length = 64;
};

/**
 * Iterative Wiener deconvolution of a background-subtracted ROI. sigma^2 is
 * n_perp n sigma_b^2 + c1^2 N with N the ROI photon count.
 */
WienerResult wiener_deconvolve(std::span<const double> roi, const ResponseLsf& lsf,
                               const noise::NoiseParams& noise, int n_perp,
                               const WienerOptions& opt = {});

struct MusicResult {
  std::vector<double> positions;  // ROI pixel coordinates, ascending
  std::vector<double> grid;
  std::vector<double> pseudospectrum;
  int order = 0;
};

/// Largest m the band of `w` supports.
int music_max_sources(const WienerResult& w);

/// MUSIC on the sequence f[k]: sliding-window covariance of order 2m + 2, noise subspace from
/// the smallest eigenvalues, pseudospectrum scanned at 0.05 px. Peaks are taken inside
/// `scan` (ROI pixels) when given, otherwise over the whole ROI.
MusicResult music_estimate(const WienerResult& w, int m,
                           std::optional<std::pair<double, double>> scan = std::nullopt);

struct AtomEstimate {
  std::vector<double> xi;      // ROI pixel coordinates, ascending
  std::vector<long> p;         // lattice sites (filled by lattice_refine)
  std::vector<double> A;
  double chi2 = 0.0;
  int dof = 0;
  double confidence = 0.0;     // chi-square upper-tail probability
  bool converged = false;
  bool reliable = true;
  bool seed_order_violated = false;
  std::vector<bool> amplitude_at_bound;
  double delta_L = 0.0;        // lattice offset in ROI coordinates
  std::vector<std::string> flags;
};

struct AmplitudeBounds {
  double lo = 0.0;
  double hi = 1e300;

  /// Peak +- 5 widths of the one-atom histogram peak.
  static AmplitudeBounds from_histogram(double peak, double width);
};

/// Noise-weighted NLLS over positions and amplitudes with sigma evaluated on the model.
AtomEstimate nlls_fit(std::span<const double> roi, const ResponseLsf& lsf, int m,
                      std::span<const double> seeds, const noise::NoiseParams& noise, int n_perp,
                      const AmplitudeBounds& bounds = {});

struct LocalizeResult {
  std::vector<double> seeds;   // MUSIC positions, window pixels
  AtomEstimate estimate;       // window pixels
  int starts = 0;
};

/**
 * Wiener + MUSIC + NLLS on a window that contains the ROI core [core.first, core.second) plus a
 * margin. MUSIC peaks are searched in the core only. The fit is repeated from evenly spaced
 * starts across the core and the lowest chi-square wins.
 */
LocalizeResult localize(std::span<const double> window, std::pair<std::size_t, std::size_t> core,
                        const ResponseLsf& lsf, int m, const noise::NoiseParams& noise, int n_perp,
                        const AmplitudeBounds& bounds = {}, const WienerOptions& wiener = {});

/// Model intensity sum_l A_l L(x_i - xi_l) on the ROI pixels.
std::vector<double> model_profile(std::size_t n, const ResponseLsf& lsf, std::span<const double> xi,
                                  std::span<const double> A);

/// Weighted residual sum for a fixed configuration.
double chi2_of(std::span<const double> roi, std::span<const double> model,
               const noise::NoiseParams& noise, int n_perp);

struct RefineOptions {
  double reject_below = 1e-3;
  AmplitudeBounds bounds;
};

/**
 * Enumerates neighbour distances within +-1 site of the rounded continuous estimate (no two atoms
 * on one site), refits amplitudes and the lattice offset for each, and keeps the lowest chi2
 * (ties: smallest total displacement from the continuous positions).
 */
AtomEstimate lattice_refine(const AtomEstimate& est, std::span<const double> roi,
                            const LatticeModel& lattice, const ResponseLsf& lsf,
                            const noise::NoiseParams& noise, int n_perp,
                            const RefineOptions& opt = {});

/// Same as lattice_refine with one offset shared by every ROI of a frame (offsets given in frame
/// coordinates through `roi_starts`).
std::vector<AtomEstimate> lattice_refine_joint(const std::vector<AtomEstimate>& ests,
                                               const std::vector<std::vector<double>>& rois,
                                               std::span<const std::size_t> roi_starts,
                                               const LatticeModel& lattice, const ResponseLsf& lsf,
                                               const noise::NoiseParams& noise, int n_perp,
                                               const RefineOptions& opt = {});

struct LatticeCalibration {
  LatticeModel lattice;
  double residual_rms = 0.0;
  double resultant = 0.0;
  std::size_t n_samples = 0;
};

/// Common divisor in [1, 2] px of pairwise distances, from the circular resultant then least squares.
LatticeCalibration calibrate_lattice(std::span<const double> distances, double a_nm = 433.0);

/// Analytic localization precision (um); kappa = 2 for EMCCD excess noise.
double precision_bound(double rms_psf_um, double delta_p_um, double n_photons, double sigma_b,
                       int n_perp, bool emccd);

}  // namespace atomloc::loc
