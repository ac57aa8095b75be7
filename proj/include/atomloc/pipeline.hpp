#pragma once

#include "atomloc/localization.hpp"
#include "atomloc/lsf.hpp"

#include <optional>
#include <string>
#include <vector>

namespace atomloc {

/// Everything the analysis needs besides the frame.
struct Calibration {
  ResponseLsf lsf;                  // L_CCD used when no atlas is given
  std::optional<lsf::LsfAtlas> atlas;
  noise::NoiseParams noise = noise::NoiseParams::reference_camera();
  LatticeModel lattice;             // delta_L in frame pixels
  std::optional<loc::PhotonHistogramModel> histogram;
  double photons_per_atom = 1300.0;
  loc::AmplitudeBounds bounds;
  std::string id = "default";

  const ResponseLsf& lsf_for(double column) const;
};

struct AnalyzeOptions {
  int known_atoms = 0;           // > 0 skips counting
  double min_confidence = 0.99;
  bool merge_rois = false;       // analyze the hull of all ROIs as one
  bool refine = true;
  bool joint_lattice = false;
  /// Pixels added on both sides of each ROI before deconvolution and fitting, in Abbe radii.
  double window_margin_abbe = 4.0;
  /// Passes that re-estimate the baseline after removing the fitted LSF wings from the
  /// signal-free pixels.
  int baseline_refits = 1;
  loc::SegmentOptions segment;
  loc::WienerOptions wiener;
  loc::RefineOptions refine_options;
};

struct RoiResult {
  loc::Roi roi;
  std::vector<double> seeds;     // frame pixels
  loc::AtomEstimate continuous;  // frame pixels
  loc::AtomEstimate discrete;    // frame pixels
  bool analyzed = false;
  std::string note;
};

struct FrameResult {
  std::vector<RoiResult> rois;
  std::vector<loc::PixelRange> signal_free;
  int n_perp = 1;
  /// Amount added back to the profile after the model-based baseline correction, e-/column.
  double baseline_correction = 0.0;
};

/// Full chain on one profile: baseline, segmentation, counting, Wiener, MUSIC, NLLS, lattice.
FrameResult analyze_profile(const Profile1D& raw, const Calibration& cal, const AnalyzeOptions& opt = {});

FrameResult analyze_frame(const PixelImage& frame, const Calibration& cal, const AnalyzeOptions& opt = {});

}  // namespace atomloc
