#pragma once

#include "atomloc/response.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace atomloc::wavefront {

using ZernikeIndex = std::pair<int, int>;  // (n, m), m >= 0

inline constexpr ZernikeIndex kDefocus{2, 0};
inline constexpr ZernikeIndex kAstigmatism{2, 2};
inline constexpr ZernikeIndex kComa{3, 1};
inline constexpr ZernikeIndex kTrefoil{3, 3};
inline constexpr ZernikeIndex kSpherical{4, 0};

/**
 * Pupil phase as a sum of RMS-normalized Zernike terms c * N_nm R_nm(rho) cos(m (theta - phi)),
 * coefficients in waves. theta is measured from the lattice axis.
 */
struct ZernikeWavefront {
  std::map<ZernikeIndex, double> coeffs;
  std::map<ZernikeIndex, double> angles;  // radians; missing entries are 0
  double na = 0.228;
  double lambda_nm = 852.0;
  int pupil_grid = 512;

  double coeff(ZernikeIndex t) const;
  double angle(ZernikeIndex t) const;
  double abbe_radius_um() const { return lambda_nm * 1e-3 / (2.0 * na); }
  /// Quadrature sum of the coefficients, in waves.
  double rms_error() const;
  void validate() const;

  /// Aberration values of the reference objective.
  static ZernikeWavefront reference_objective();
};

/// Value of the RMS-normalized Zernike term at polar pupil coordinates.
double zernike(ZernikeIndex t, double rho, double theta, double angle = 0.0);

struct LsfSampling {
  int s = 8;
  double delta_s_um = 0.0;      // <= 0 selects the default pixel pitch
  double half_width_px = 100.0;
  /// Pixel aperture to fold in (0 for the optical LSF).
  double delta_p_um = 0.0;
  /// Offset of the LSF origin, pixels.
  double shift_px = 0.0;
};

/**
 * Fraunhofer LSF. The PSF integrated over the transverse axis equals the sum over pupil rows of
 * |FFT(row)|^2, so only 1D transforms (padded 4x) are needed. The band-limited result is then
 * evaluated on the requested sub-pixel grid from its spectrum.
 * Throws if pupil_grid < 256 or if the pupil and image energies disagree by more than 1e-4.
 */
ResponseLsf lsf_from_wavefront(const ZernikeWavefront& w, const LsfSampling& sampling = {});

/// PSF at object-plane position (x, y) in um, relative to the peak of the ideal PSF.
double psf_relative(const ZernikeWavefront& w, double x_um, double y_um);

struct StrehlResult {
  double strehl = 1.0;
  double rms_error = 0.0;
  double peak_x_um = 0.0;
  double peak_y_um = 0.0;
};

StrehlResult strehl_and_rms(const ZernikeWavefront& w);

struct Mtf {
  std::vector<double> freq_per_um;
  std::vector<double> values;
  double cutoff_per_um = 0.0;  // largest frequency with mtf > 1e-3
  double bin_per_um = 0.0;
};

/// |OTF| normalized to 1 at zero frequency, on the DFT grid of an n_samples-pixel frame.
Mtf mtf_of(const ResponseLsf& lsf, std::size_t n_samples = 512);

struct TransferFunctions {
  Mtf mtf;
  ResponseLsf lsf;
  double strehl = 1.0;
  double rms_error = 0.0;
};

TransferFunctions transfer_functions(const ZernikeWavefront& w, const LsfSampling& sampling = {});

struct FitOptions {
  double delta_p_um = 0.0;  // pixel aperture included in the model
  int pupil_grid = 256;
  double lambda_nm = 852.0;
  int max_iterations = 80;
  /// Angles scanned per non-rotationally symmetric term when > 0.
  int angle_scan_points = 0;
};

struct AngleScan {
  ZernikeIndex term;
  std::vector<double> angles;
  std::vector<double> costs;
  /// Range of angles whose cost stays within 2x the best cost.
  double spread = 0.0;
};

struct WavefrontFitReport {
  ZernikeWavefront wavefront;
  std::map<ZernikeIndex, double> coeff_err;
  double na_err = 0.0;
  double shift_px = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Defocus and 0-degree astigmatism only enter through this combination (2 sqrt3 c20 + sqrt6 c22).
  double quadratic_combination = 0.0;
  double quadratic_combination_err = 0.0;
  std::vector<std::string> flags;
  std::vector<AngleScan> angle_scans;
};

/**
 * Least-squares fit of lsf_from_wavefront to a measured LSF over defocus, astigmatism, coma,
 * trefoil, spherical aberration, NA and a position offset. Angles are held at zero. The global
 * sign of the even terms is not identifiable and is fixed so the largest even term is positive.
 */
WavefrontFitReport fit_wavefront(const ResponseLsf& measured, const FitOptions& opt = {});

}  // namespace atomloc::wavefront
