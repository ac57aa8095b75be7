#pragma once

#include "atomloc/response.hpp"
#include "atomloc/types.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace atomloc::lsf {

/// Default low-pass cutoff, 1.2 / r_A, in cycles per pixel.
double default_cutoff();

/// Zeroes all DFT components with |k| > cutoff (cycles per pixel) and returns the real part.
Profile1D fourier_lowpass(const Profile1D& profile, double cutoff);

/**
 * Fourier zero-padding by factor s. Sample j of the result sits at x = j / s (pixels from the
 * first input sample); the grid is periodic with the input length. A Nyquist bin is split evenly
 * between the two signed frequencies.
 */
std::vector<double> upsample(std::span<const double> values, int s);

struct ReconstructOptions {
  std::optional<ResponseLsf> initial;
  int s = 8;
  double cutoff = 0.0;  // <= 0 selects default_cutoff()
  int max_iters = 30;
  double tolerance = 1e-4;  // max |change| / peak
  /// Half width of the window cut around each emitter, in Abbe radii.
  double window_abbe = 10.0;
  /// rms of the iteration-0 Gaussian, um.
  double initial_rms_um = 1.5;
  double delta_s_um = 0.0;  // <= 0 selects the default pixel pitch
  /// Largest allowed secondary maximum (relative to the peak) beyond 4 r_A from the emitter.
  double isolation_ratio = 0.25;
};

struct ReconstructResult {
  ResponseLsf lsf;
  int iterations = 0;
  bool converged = false;
  std::vector<double> change_trace;
  /// Fitted emitter positions (parent-profile pixels) and amplitudes from the final pass.
  std::vector<double> positions;
  std::vector<double> amplitudes;
  /// Sub-pixel shift applied to each profile in the final pass, in pixels.
  std::vector<double> applied_shifts;
};

/**
 * Iterative sub-pixel reconstruction from background-subtracted single-emitter profiles.
 * Each pass fits the current guess to every low-passed profile, shifts the upsampled profiles
 * by the estimate rounded to a whole sub-pixel, averages them and renormalizes.
 */
ReconstructResult reconstruct_lsf(const std::vector<Profile1D>& profiles,
                                  const ReconstructOptions& opt = {});

/// Per-region LSFs keyed by half-open column intervals.
class LsfAtlas {
 public:
  void add(std::pair<std::size_t, std::size_t> columns, ResponseLsf lsf);
  const ResponseLsf& lookup(double column) const;
  const std::map<std::pair<std::size_t, std::size_t>, ResponseLsf>& patches() const { return patches_; }
  std::size_t size() const { return patches_.size(); }

 private:
  std::map<std::pair<std::size_t, std::size_t>, ResponseLsf> patches_;
};

struct PatchProfiles {
  std::pair<std::size_t, std::size_t> columns;
  std::vector<Profile1D> profiles;
};

/// Independent reconstruction per patch; patch ids are "patch-<index>".
LsfAtlas build_atlas(const std::vector<PatchProfiles>& patches, const ReconstructOptions& opt = {});

}  // namespace atomloc::lsf
