#include "atomloc/pipeline.hpp"

#include "atomloc/defaults.hpp"

#include <algorithm>
#include <cmath>

namespace atomloc {

const ResponseLsf& Calibration::lsf_for(double column) const {
  return atlas ? atlas->lookup(column) : lsf;
}

namespace {

loc::AtomEstimate to_frame(loc::AtomEstimate e, double start) {
  for (double& x : e.xi) x += start;
  e.delta_L += start;
  return e;
}

}  // namespace

namespace {

// Counting, localization and lattice refinement of every ROI on a background-subtracted profile.
std::vector<RoiResult> fit_rois(const Profile1D& prof, std::vector<loc::Roi> rois,
                                const std::vector<loc::AcceptanceRegion>& regions, const Calibration& cal,
                                const AnalyzeOptions& opt) {
  FrameResult out;
  out.n_perp = prof.n_perp;
  std::vector<loc::AtomEstimate> joint_in;
  std::vector<std::vector<double>> joint_rois;
  std::vector<std::size_t> joint_starts, joint_index;
  for (std::size_t ri = 0; ri < rois.size(); ++ri) {
    auto& roi = rois[ri];
    RoiResult rr;
    if (opt.known_atoms > 0) {
      roi.atom_count = opt.known_atoms;
      roi.count_confidence = 1.0;
      roi.accepted = true;
    } else if (cal.histogram) {
      roi.accepted = false;
      for (const auto& r : regions)
        if (roi.integrated_e >= r.lo && roi.integrated_e < r.hi) {
          roi.atom_count = r.m;
          roi.count_confidence = cal.histogram->posterior(r.m, roi.integrated_e);
          roi.accepted = true;
        }
      if (!roi.accepted) {
        const auto c = loc::count_atoms(roi, *cal.histogram, opt.min_confidence);
        roi.atom_count = c.m;
        roi.count_confidence = c.confidence;
      }
    } else {
      roi.atom_count = std::max(1, static_cast<int>(std::lround(roi.integrated_e / cal.photons_per_atom)));
      roi.count_confidence = 0.0;
      roi.accepted = true;
    }
    rr.roi = roi;
    if (!roi.accepted || roi.atom_count < 1) {
      rr.note = "atom count rejected";
      out.rois.push_back(rr);
      continue;
    }
    const long margin = static_cast<long>(std::ceil(opt.window_margin_abbe * defaults::abbe_radius_px()));
    // Stop halfway to the neighbouring ROIs.
    long left = 0, right = static_cast<long>(prof.size());
    if (ri > 0) left = static_cast<long>(rois[ri - 1].range.second + roi.range.first) / 2;
    if (ri + 1 < rois.size()) right = static_cast<long>(roi.range.second + rois[ri + 1].range.first + 1) / 2;
    const auto start = static_cast<std::size_t>(std::max(left, static_cast<long>(roi.range.first) - margin));
    const auto stop = static_cast<std::size_t>(std::min(right, static_cast<long>(roi.range.second) + margin));
    const std::vector<double> values(prof.values.begin() + static_cast<long>(start),
                                     prof.values.begin() + static_cast<long>(stop));
    const double centre = 0.5 * static_cast<double>(roi.range.first + roi.range.second);
    const ResponseLsf& L = cal.lsf_for(centre);
    try {
      const auto loc_res = loc::localize(values, {roi.range.first - start, roi.range.second - start}, L,
                                         roi.atom_count, cal.noise, prof.n_perp, cal.bounds, opt.wiener);
      const auto& cont = loc_res.estimate;
      for (double x : loc_res.seeds) rr.seeds.push_back(x + static_cast<double>(start));
      if (opt.refine) {
        if (opt.joint_lattice) {
          joint_in.push_back(cont);
          joint_rois.push_back(values);
          joint_starts.push_back(start);
          joint_index.push_back(out.rois.size());
        } else {
          LatticeModel local = cal.lattice;
          local.delta_L = cal.lattice.delta_L - static_cast<double>(start);
          rr.discrete = to_frame(loc::lattice_refine(cont, values, local, L, cal.noise, prof.n_perp,
                                                     {opt.refine_options.reject_below, cal.bounds}),
                                 static_cast<double>(start));
        }
      }
      rr.continuous = to_frame(cont, static_cast<double>(start));
      rr.analyzed = true;
    } catch (const std::exception& e) {
      rr.note = e.what();
    }
    out.rois.push_back(rr);
  }
  if (!joint_in.empty()) {
    const ResponseLsf& L = cal.lsf_for(static_cast<double>(joint_starts.front()));
    auto refined = loc::lattice_refine_joint(joint_in, joint_rois, joint_starts, cal.lattice, L, cal.noise,
                                             out.n_perp, {opt.refine_options.reject_below, cal.bounds});
    for (std::size_t k = 0; k < refined.size(); ++k)
      out.rois[joint_index[k]].discrete = to_frame(refined[k], static_cast<double>(joint_starts[k]));
  }
  return out.rois;
}

// Mean over the signal-free pixels of the fitted model, i.e. the wings of the fitted atoms.
// Fits that fail the chi-square test (e.g. noise spikes forced to one atom) are left out.
double wing_level(const std::vector<RoiResult>& rois, const std::vector<loc::PixelRange>& signal_free,
                  const Calibration& cal, double reject_below) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [a, b] : signal_free)
    for (std::size_t i = a; i < b; ++i) {
      for (const auto& r : rois) {
        if (!r.analyzed || r.continuous.confidence < reject_below) continue;
        const ResponseLsf& L = cal.lsf_for(0.5 * static_cast<double>(r.roi.range.first + r.roi.range.second));
        for (std::size_t l = 0; l < r.continuous.xi.size(); ++l)
          sum += r.continuous.A[l] * L(static_cast<double>(i) - r.continuous.xi[l]);
      }
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

FrameResult analyze_profile(const Profile1D& raw, const Calibration& cal, const AnalyzeOptions& opt) {
  loc::Segmentation seg;
  Profile1D prof = loc::auto_subtract_background(raw, cal.noise, opt.segment, &seg);
  FrameResult out;
  out.signal_free = seg.signal_free;
  out.n_perp = prof.n_perp;
  std::vector<loc::Roi> rois = seg.rois;
  if (opt.merge_rois && rois.size() > 1) {
    loc::Roi hull;
    hull.range = {rois.front().range.first, rois.back().range.second};
    for (std::size_t i = hull.range.first; i < hull.range.second; ++i) hull.integrated_e += prof.values[i];
    rois = {hull};
  }
  std::vector<loc::AcceptanceRegion> regions;
  if (cal.histogram && opt.known_atoms <= 0) regions = loc::acceptance_regions(*cal.histogram, opt.min_confidence);
  out.rois = fit_rois(prof, rois, regions, cal, opt);
  // The signal-free pixels still carry the far wings of the LSF; the first baseline is high by
  // their mean. Correct it with the fitted model and fit again.
  for (int pass = 0; pass < opt.baseline_refits && !out.signal_free.empty(); ++pass) {
    const double wing = wing_level(out.rois, out.signal_free, cal, opt.refine_options.reject_below);
    if (wing == 0.0) break;
    for (double& v : prof.values) v += wing;
    out.baseline_correction += wing;
    out.rois = fit_rois(prof, rois, regions, cal, opt);
  }
  return out;
}

FrameResult analyze_frame(const PixelImage& frame, const Calibration& cal, const AnalyzeOptions& opt) {
  return analyze_profile(imaging::integrate_transverse(frame), cal, opt);
}

}  // namespace atomloc
