#include "atomloc/defaults.hpp"
#include "atomloc/imaging.hpp"
#include "atomloc/localization.hpp"
#include "atomloc/pipeline.hpp"
#include "properties.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace atomloc;

namespace {

const double kDs = defaults::kSamplingSpacingUm;

ResponseLsf optical() { return gaussian_lsf(0.9 / kDs, 8, kDs, 60.0); }
ResponseLsf ccd() { return props::test_lsf(); }

noise::NoiseParams noiseless() {
  auto p = noise::NoiseParams::shot_noise_only();
  p.c1 = 0.0;
  return p;
}

}  // namespace

TEST(Segmentation, ZeroProfileHasNoRois) {
  Profile1D p;
  p.values.assign(200, 0.0);
  p.n_perp = 40;
  const auto seg = loc::segment_rois(p, noise::NoiseParams::reference_camera());
  EXPECT_TRUE(seg.rois.empty());
}

TEST(Segmentation, TwoSeparatedAtoms) {
  const LatticeModel lat;
  const std::vector<long> sites = {100, 120};
  const std::vector<double> amps = {1300.0, 1300.0};
  const auto atoms = place_on_lattice(sites, lat, amps);
  imaging::SimulationOptions so;
  so.cols = 256;
  const auto img = imaging::simulate_exposure(atoms, optical(), noise::NoiseParams::reference_camera(), lat, 9, so);
  loc::Segmentation seg;
  loc::auto_subtract_background(imaging::integrate_transverse(img), noise::NoiseParams::reference_camera(), {}, &seg);
  ASSERT_EQ(seg.rois.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_LE(static_cast<double>(seg.rois[k].range.first), atoms.positions[k]);
    EXPECT_GT(static_cast<double>(seg.rois[k].range.second), atoms.positions[k]);
  }
  // Signal-free regions never overlap an ROI.
  for (const auto& [fb, fe] : seg.signal_free)
    for (const auto& r : seg.rois) EXPECT_FALSE(fb < r.range.second && r.range.first < fe);
}

TEST(PhotonHistogram, RecoversAbundancesAndSqrtWidths) {
  auto rng = imaging::make_rng(21);
  const double peak = 1300.0, w1 = 60.0;
  const std::vector<double> frac = {0.5, 0.3, 0.2};
  std::vector<double> totals;
  std::discrete_distribution<int> pick(frac.begin(), frac.end());
  std::normal_distribution<double> n01;
  const int n = 5000;
  for (int i = 0; i < n; ++i) {
    const int m = pick(rng) + 1;
    totals.push_back(m * peak + w1 * std::sqrt(static_cast<double>(m)) * n01(rng));
  }
  const auto model = loc::fit_photon_histogram(totals, 3, peak);
  EXPECT_NEAR(model.peak_spacing, peak, 10.0);
  EXPECT_NEAR(model.w1, w1, 5.0);
  for (int m = 1; m <= 3; ++m) {
    const double se = std::sqrt(frac[m - 1] * (1.0 - frac[m - 1]) / n);
    EXPECT_NEAR(model.abundances[m], frac[m - 1], 3.0 * se + 0.005) << "m=" << m;
    EXPECT_NEAR(model.peak_widths[m - 1], model.w1 * std::sqrt(static_cast<double>(m)), 1e-9);
  }
}

TEST(Counting, ZeroTotalAndPeakCentre) {
  auto rng = imaging::make_rng(22);
  std::normal_distribution<double> n01;
  std::vector<double> totals;
  for (int i = 0; i < 3000; ++i) totals.push_back(1300.0 * (1 + i % 2) + 55.0 * std::sqrt(1.0 + i % 2) * n01(rng));
  const auto model = loc::fit_photon_histogram(totals, 3, 1300.0);
  loc::Roi empty;
  const auto c0 = loc::count_atoms(empty, model);
  EXPECT_EQ(c0.m, 0);
  EXPECT_FALSE(c0.accepted);
  loc::Roi one;
  one.integrated_e = model.peak_spacing;
  const auto c1 = loc::count_atoms(one, model, 0.99);
  EXPECT_EQ(c1.m, 1);
  EXPECT_TRUE(c1.accepted);
}

TEST(Wiener, NoiselessLimitIsPlainDeconvolution) {
  const auto l = ccd();
  const auto prof = props::mean_profile(AtomConfig{{21.3}, {1300.0}}, optical(), 64);
  const auto w = loc::wiener_deconvolve(prof.values, l, noiseless(), 40);
  for (double f : w.filter) EXPECT_NEAR(f, 1.0, 1e-12);
  // A single emitter at xi has phase -2 pi k xi / n; consecutive bins differ by a constant step.
  std::complex<double> acc = 0.0;
  for (std::size_t j = 0; j + 1 < w.k.size(); ++j) acc += w.f[j + 1] * std::conj(w.f[j]);
  const double xi = -std::arg(acc) * static_cast<double>(w.n) / (2.0 * std::numbers::pi);
  EXPECT_NEAR(xi, 21.3, 0.1);
}

TEST(Wiener, FilterNearOneAtLowFrequency) {
  const auto prof = props::mean_profile(AtomConfig{{31.4}, {1300.0}}, optical(), 64);
  const auto w = loc::wiener_deconvolve(prof.values, ccd(), noise::NoiseParams::reference_camera(), 40);
  for (std::size_t j = 0; j < w.k.size(); ++j)
    if (w.k[j] == 0) EXPECT_GT(w.filter[j], 0.99);
}

TEST(Music, SingleNoiselessAtom) {
  const auto prof = props::mean_profile(AtomConfig{{30.6}, {1300.0}}, optical(), 64);
  const auto w = loc::wiener_deconvolve(prof.values, ccd(), noiseless(), 40);
  const auto m = loc::music_estimate(w, 1);
  ASSERT_EQ(m.positions.size(), 1u);
  EXPECT_NEAR(m.positions[0], 30.6, 0.125);
}

TEST(Music, TooManySourcesThrows) {
  const auto prof = props::mean_profile(AtomConfig{{30.6}, {1300.0}}, optical(), 64);
  const auto w = loc::wiener_deconvolve(prof.values, ccd(), noiseless(), 40);
  EXPECT_THROW(loc::music_estimate(w, loc::music_max_sources(w) + 1), std::invalid_argument);
}

TEST(Music, TwoSitesApartWithNoise) {
  const LatticeModel lat;
  const auto l = ccd();
  const auto noise = noise::NoiseParams::reference_camera();
  const std::vector<long> sites = {40, 42};
  const std::vector<double> amps = {1300.0, 1300.0};
  const auto atoms = place_on_lattice(sites, lat, amps);
  imaging::SimulationOptions so;
  so.cols = 128;
  int good = 0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    auto rng = imaging::make_rng(23, t);
    const auto img = imaging::simulate_exposure(atoms, optical(), noise, lat, rng, so);
    const auto prof = loc::auto_subtract_background(imaging::integrate_transverse(img), noise);
    const std::size_t b = 32;
    std::span<const double> window(prof.values.data() + b, 64);
    const auto r = loc::localize(window, {20, 44}, l, 2, noise, 40);
    bool ok = r.seeds.size() == 2;
    for (std::size_t k = 0; ok && k < 2; ++k) ok = std::abs(r.seeds[k] + b - atoms.positions[k]) < lat.a_px;
    good += ok;
  }
  EXPECT_GT(static_cast<double>(good) / trials, 0.9);
}

TEST(Nlls, NoiselessSingleAtomIsExact) {
  const auto l = ccd();
  AtomConfig truth{{40.37}, {1300.0}};
  std::vector<double> roi = loc::model_profile(80, l, truth.positions, truth.amplitudes);
  const std::vector<double> seeds = {39.5};
  const auto e = loc::nlls_fit(roi, l, 1, seeds, noise::NoiseParams::reference_camera(), 40);
  EXPECT_TRUE(e.converged);
  EXPECT_NEAR(e.xi[0], 40.37, 1e-3);
  EXPECT_NEAR(e.A[0] / 1300.0, 1.0, 1e-6);
  EXPECT_LT(e.chi2, 1e-6);
}

TEST(Nlls, RmsErrorMatchesBound) {
  const double rms_um = 1.5;
  const auto opt_lsf = gaussian_lsf(rms_um / kDs, 8, kDs, 80.0);
  const auto l = pixel_convolve(opt_lsf, defaults::kPixelApertureUm);
  const auto noise = noise::NoiseParams::reference_camera();
  imaging::SimulationOptions so;
  so.cols = 128;
  double se = 0.0;
  const int trials = 300;
  for (int t = 0; t < trials; ++t) {
    auto rng = imaging::make_rng(24, t);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double x = 64.0 + u(rng);
    const auto img = imaging::simulate_exposure(AtomConfig{{x}, {1300.0}}, opt_lsf, noise, LatticeModel{}, rng, so);
    const auto prof = loc::auto_subtract_background(imaging::integrate_transverse(img), noise);
    const std::vector<double> seeds = {64.0};
    const auto e = loc::nlls_fit(prof.values, l, 1, seeds, noise, 40);
    se += std::pow((e.xi[0] - x) * kDs, 2);
  }
  const double rms = std::sqrt(se / trials);
  const double bound = loc::precision_bound(rms_um, defaults::kPixelApertureUm, 1300.0, 0.6, 40, true);
  EXPECT_NEAR(rms / bound, 1.0, 0.2);
}

TEST(LatticeRefine, NoiselessSitesUnchanged) {
  const auto cal = props::test_calibration(ccd());
  const std::vector<long> sites = {60, 61, 62, 63};
  const std::vector<double> amps(4, 1300.0);
  const auto prof = props::mean_profile(place_on_lattice(sites, cal.lattice, amps), optical(), 128);
  AnalyzeOptions opt;
  opt.known_atoms = 4;
  opt.merge_rois = true;
  const auto r = analyze_profile(prof, cal, opt);
  ASSERT_EQ(r.rois.size(), 1u);
  EXPECT_EQ(r.rois[0].discrete.p, sites);
}

TEST(LatticeCalibration, RecoversSpacing) {
  auto rng = imaging::make_rng(25);
  std::uniform_int_distribution<int> k(1, 60);
  std::normal_distribution<double> n(0.0, 0.05);
  std::vector<double> d;
  for (int i = 0; i < 500; ++i) d.push_back(1.47 * k(rng) + n(rng));
  EXPECT_NEAR(loc::calibrate_lattice(d).lattice.a_px, 1.47, 0.01);
}

TEST(LatticeCalibration, ExactMultiplesHaveZeroResidual) {
  std::vector<double> d;
  for (int r = 0; r < 3; ++r)
    for (int k = 1; k <= 40; ++k) d.push_back(1.47 * k);
  const auto c = loc::calibrate_lattice(d);
  EXPECT_NEAR(c.lattice.a_px, 1.47, 1e-9);
  EXPECT_NEAR(c.residual_rms, 0.0, 1e-9);
}

TEST(LatticeCalibration, DoesNotLockToDefault) {
  auto rng = imaging::make_rng(26);
  std::uniform_int_distribution<int> k(1, 60);
  std::normal_distribution<double> n(0.0, 0.05);
  std::vector<double> d;
  for (int i = 0; i < 500; ++i) d.push_back(1.30 * k(rng) + n(rng));
  EXPECT_NEAR(loc::calibrate_lattice(d).lattice.a_px, 1.30, 0.01);
}

TEST(PrecisionBound, ReferenceValue) {
  const double b = loc::precision_bound(1.5, defaults::kPixelApertureUm, 1300.0, 0.6, 40, true);
  EXPECT_NEAR(b * 1e3, 60.0, 0.2 * 60.0);
}

TEST(PrecisionBound, Limits) {
  EXPECT_LT(loc::precision_bound(1.5, 0.29, 1e12, 0.6, 40, true), 1e-4);
  EXPECT_NEAR(loc::precision_bound(1.5, 0.0, 1300.0, 0.0, 40, true), std::sqrt(2.0) * 1.5 / std::sqrt(1300.0), 1e-12);
}

TEST(Properties, AllHold) {
  for (const auto& p : props::all()) {
    const auto o = p.run();
    EXPECT_EQ(o.violations, 0) << p.name << ": " << o.first;
  }
}
