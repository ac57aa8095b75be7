#include "atomloc/defaults.hpp"
#include "atomloc/localization.hpp"
#include "atomloc/lsf.hpp"

#include <algorithm>
#include <cmath>

namespace atomloc::loc {

Segmentation segment_rois(const Profile1D& profile, const noise::NoiseParams& noise,
                          const SegmentOptions& opt) {
  profile.validate();
  const std::size_t n = profile.size();
  const double cutoff = opt.cutoff > 0.0 ? opt.cutoff : lsf::default_cutoff();
  const double dil = opt.dilation_px > 0.0 ? opt.dilation_px : defaults::abbe_radius_px();
  // Pixels whose distance to a run pixel is at most one dilation radius.
  const auto margin = static_cast<std::size_t>(std::floor(dil));
  double thr = opt.threshold_sigma * noise.sigma_b * std::sqrt(static_cast<double>(profile.n_perp));
  const auto smooth = lsf::fourier_lowpass(profile, cutoff);
  const double top = *std::max_element(smooth.values.begin(), smooth.values.end());
  thr = std::max(thr, 1e-6 * top);  // noiseless input: ignore filter ringing

  std::vector<PixelRange> runs;
  for (std::size_t i = 0; i < n;) {
    if (smooth.values[i] <= thr) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && smooth.values[j] > thr) ++j;
    const std::size_t lo = i > margin ? i - margin : 0;
    const std::size_t hi = std::min(n, j + margin);
    if (!runs.empty() && lo <= runs.back().second)
      runs.back().second = std::max(runs.back().second, hi);
    else
      runs.emplace_back(lo, hi);
    i = j;
  }

  Segmentation seg;
  std::size_t prev = 0;
  for (const auto& r : runs) {
    Roi roi;
    roi.range = r;
    for (std::size_t i = r.first; i < r.second; ++i) roi.integrated_e += profile.values[i];
    seg.rois.push_back(roi);
    if (r.first > prev) seg.signal_free.emplace_back(prev, r.first);
    prev = r.second;
  }
  if (prev < n) seg.signal_free.emplace_back(prev, n);
  return seg;
}

Profile1D auto_subtract_background(const Profile1D& raw, const noise::NoiseParams& noise,
                                   const SegmentOptions& opt, Segmentation* seg_out) {
  raw.validate();
  std::vector<double> sorted = raw.values;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  Profile1D cur = raw;
  const double med = sorted[sorted.size() / 2];
  for (double& v : cur.values) v -= med;
  Segmentation seg;
  for (int pass = 0; pass < 2; ++pass) {
    seg = segment_rois(cur, noise, opt);
    if (seg.signal_free.empty()) break;
    std::vector<PixelRange> rois;
    for (const auto& r : seg.rois) rois.push_back(r.range);
    cur = imaging::subtract_background(raw, seg.signal_free, rois);
  }
  cur.background_subtracted = true;
  seg = segment_rois(cur, noise, opt);
  if (seg_out) *seg_out = seg;
  return cur;
}

}  // namespace atomloc::loc
