#include "atomloc/defaults.hpp"
#include "atomloc/imaging.hpp"
#include "atomloc/lsf.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

using namespace atomloc;

namespace {

const double kDs = defaults::kSamplingSpacingUm;
const double kDp = defaults::kPixelApertureUm;

ResponseLsf optical() { return gaussian_lsf(0.9 / kDs, 8, kDs, 60.0); }

}  // namespace

TEST(ContinuousImage, EmptyConfigurationIsZero) {
  const auto f = imaging::continuous_image(AtomConfig{}, optical());
  for (double x : {-10.0, 0.0, 3.3, 100.0}) EXPECT_EQ(f(x), 0.0);
}

TEST(ContinuousImage, SingleUnitAtomIsTheLsf) {
  const auto l = optical();
  const auto f = imaging::continuous_image(AtomConfig{{0.0}, {1.0}}, l);
  for (double x : {-7.1, -1.0, 0.0, 0.37, 5.5}) EXPECT_DOUBLE_EQ(f(x), l(x));
}

TEST(ContinuousImage, Superposition) {
  const auto l = optical();
  const auto both = imaging::continuous_image(AtomConfig{{10.0, 13.4}, {1.0, 2.0}}, l);
  const auto a = imaging::continuous_image(AtomConfig{{10.0}, {1.0}}, l);
  const auto b = imaging::continuous_image(AtomConfig{{13.4}, {2.0}}, l);
  auto rng = imaging::make_rng(3);
  std::uniform_real_distribution<double> u(-10.0, 30.0);
  for (int i = 0; i < 100; ++i) {
    const double x = u(rng);
    EXPECT_NEAR(both(x), a(x) + b(x), 1e-12);
  }
}

TEST(SampleToCcd, FlatField) {
  const auto p = imaging::sample_to_ccd([](double) { return 2.5; }, kDs, kDp, 20);
  for (double v : p.values) EXPECT_NEAR(v, 2.5, 1e-12);
}

TEST(SampleToCcd, NarrowPeakStaysInOnePixel) {
  // Unit-mass Gaussian of rms 0.08 px centred on pixel 5; a box would defeat the quadrature.
  const double w = 0.08;
  const auto f = [w](double x) {
    return std::exp(-0.5 * std::pow((x - 5.0) / w, 2)) / (w * std::sqrt(2.0 * std::numbers::pi));
  };
  const auto p = imaging::sample_to_ccd(f, kDs, kDp, 11);
  const double aperture_px = kDp / kDs;
  EXPECT_NEAR(p.values[5], 1.0 / aperture_px, 0.02 / aperture_px);
  EXPECT_LT(p.values[4], 1e-9);
  EXPECT_LT(p.values[6], 1e-9);
}

TEST(SampleToCcd, BandLimitedSignalRecoveredBySinc) {
  // Period of 4 r_A keeps the signal well inside the sampled band.
  const double period = 4.0 * defaults::abbe_radius_px();
  const std::size_t n = 256;
  const double k = std::round(n / period) / n;
  const auto f = [&](double x) { return std::cos(2.0 * std::numbers::pi * k * x); };
  // The pixel aperture attenuates the cosine by sinc(k w); undo it and upsample.
  const auto p = imaging::sample_to_ccd(f, kDs, kDp, n);
  const double w = kDp / kDs;
  const double att = std::sin(std::numbers::pi * k * w) / (std::numbers::pi * k * w);
  const auto up = lsf::upsample(p.values, 4);
  for (std::size_t j = 0; j < up.size(); ++j)
    EXPECT_NEAR(up[j] / att, f(static_cast<double>(j) / 4.0), 1e-6);
}

TEST(EmAmplify, ZeroInputGivesZero) {
  auto rng = imaging::make_rng(1);
  EXPECT_EQ(imaging::em_amplify(0, 1000.0, rng), 0.0);
}

TEST(EmAmplify, SingleElectronMoments) {
  auto rng = imaging::make_rng(2);
  const int n = 1000000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = imaging::em_amplify(1, 1000.0, rng);
    s += v;
    s2 += v * v;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 1000.0, 20.0);
  EXPECT_NEAR(var, 1e6, 2e4);
}

TEST(EmAmplify, CascadeGain) {
  EXPECT_NEAR(defaults::em_gain(), 2.92e3, 0.02e3);
  EXPECT_GT(defaults::em_gain(), 1000.0);
}

TEST(SimulateExposure, NoAtomsNoNoiseIsZero) {
  noise::NoiseParams np = noise::NoiseParams::shot_noise_only();
  np.sigma_ro = 0.0;
  imaging::SimulationOptions so;
  so.cols = 64;
  const auto img = imaging::simulate_exposure(AtomConfig{}, optical(), np, LatticeModel{}, 5, so);
  for (double v : img.counts()) EXPECT_EQ(v, 0.0);
}

TEST(SimulateExposure, ShotNoiseMomentsOfOneAtom) {
  noise::NoiseParams np = noise::NoiseParams::shot_noise_only();
  np.sigma_ro = 0.0;
  np.excess_factor = 1.0;
  np.g = 1.0;
  imaging::SimulationOptions so;
  so.cols = 96;
  so.rows = 4;
  const AtomConfig atom{{48.0}, {1300.0}};
  const auto l = gaussian_lsf(0.9 / kDs, 8, kDs, 40.0);
  const int frames = 10000;
  double s = 0.0, s2 = 0.0;
  for (int f = 0; f < frames; ++f) {
    auto rng = imaging::make_rng(77, f);
    const auto img = imaging::simulate_exposure(atom, l, np, LatticeModel{}, rng, so);
    const double tot = std::accumulate(img.counts().begin(), img.counts().end(), 0.0);
    s += tot;
    s2 += tot * tot;
  }
  const double mean = s / frames;
  const double var = s2 / frames - mean * mean;
  EXPECT_NEAR(mean, 1300.0, 0.05 * 1300.0);
  EXPECT_NEAR(var, 1300.0, 0.05 * 1300.0);
}

TEST(SimulateExposure, MeanConvergesToModel) {
  const auto np = noise::NoiseParams::reference_camera();
  imaging::SimulationOptions so;
  so.cols = 64;
  so.rows = 8;
  const AtomConfig atom{{30.0}, {1300.0}};
  const auto l = optical();
  const auto model = imaging::mean_fluorescence(atom, l, so, kDs, kDp);
  const int frames = 2000;
  std::vector<double> s(model.size(), 0.0), s2(model.size(), 0.0);
  for (int f = 0; f < frames; ++f) {
    auto rng = imaging::make_rng(91, f);
    const auto img = imaging::simulate_exposure(atom, l, np, LatticeModel{}, rng, so);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] += img.counts()[i];
      s2[i] += img.counts()[i] * img.counts()[i];
    }
  }
  // Background mean is removed with the signal-free corner pixel average.
  double bg = 0.0;
  int nbg = 0;
  for (std::size_t r = 0; r < so.rows; ++r)
    for (std::size_t c = 0; c < 5; ++c) {
      bg += s[r * so.cols + c] / frames;
      ++nbg;
    }
  bg /= nbg;
  int outliers = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double m = s[i] / frames;
    const double se = std::sqrt(std::max(s2[i] / frames - m * m, 1e-12) / frames);
    if (std::abs(m - bg - model[i]) > 3.0 * se + 1e-9) ++outliers;
  }
  // A 3-sigma band admits about 0.3% chance exceedances.
  EXPECT_LE(outliers, static_cast<int>(0.01 * s.size()) + 1);
}

TEST(IntegrateTransverse, SingleNonzeroPixel) {
  PixelImage img(8, 5, kDs, kDp, 1.0);
  img.at(3, 2) = 7.5;
  const auto p = imaging::integrate_transverse(img);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(p.values[c], c == 3 ? 7.5 : 0.0);
  EXPECT_EQ(p.n_perp, 5);
}

TEST(IntegrateTransverse, SumIsPreserved) {
  PixelImage img(16, 40, kDs, kDp, 1.0);
  auto rng = imaging::make_rng(4);
  std::normal_distribution<double> n01;
  for (double& v : img.counts()) v = n01(rng);
  const auto p = imaging::integrate_transverse(img, 0, 40);
  const double a = std::accumulate(p.values.begin(), p.values.end(), 0.0);
  const double b = std::accumulate(img.counts().begin(), img.counts().end(), 0.0);
  EXPECT_NEAR(a, b, 1e-10);
}

TEST(Background, ConstantProfileBecomesZero) {
  Profile1D p;
  p.values.assign(50, 3.0);
  const std::vector<imaging::PixelRange> free = {{0, 50}};
  const auto out = imaging::subtract_background(p, free);
  for (double v : out.values) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Background, OffsetInvariance) {
  Profile1D p;
  for (int i = 0; i < 60; ++i) p.values.push_back(std::sin(0.3 * i) + (i > 20 && i < 40 ? 50.0 : 0.0));
  Profile1D q = p;
  for (double& v : q.values) v += 17.25;
  const std::vector<imaging::PixelRange> free = {{0, 15}, {45, 60}};
  const std::vector<imaging::PixelRange> rois = {{18, 42}};
  const auto a = imaging::subtract_background(p, free, rois);
  const auto b = imaging::subtract_background(q, free, rois);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
}

TEST(Background, OverlapWithRoiThrows) {
  Profile1D p;
  p.values.assign(30, 1.0);
  const std::vector<imaging::PixelRange> free = {{0, 12}};
  const std::vector<imaging::PixelRange> rois = {{10, 20}};
  EXPECT_THROW(imaging::subtract_background(p, free, rois), std::invalid_argument);
}

TEST(Background, EstimateMatchesInjectedOffset) {
  const auto np = noise::NoiseParams::reference_camera();
  imaging::SimulationOptions so;
  so.cols = 128;
  const int frames = 100;
  double mean_est = 0.0;
  for (int f = 0; f < frames; ++f) {
    auto rng = imaging::make_rng(8, f);
    const auto img = imaging::simulate_exposure(AtomConfig{}, optical(), np, LatticeModel{}, rng, so);
    const auto p = imaging::integrate_transverse(img);
    const std::vector<imaging::PixelRange> free = {{0, p.size()}};
    mean_est += imaging::estimate_baseline(p, free) / frames;
  }
  // The per-pixel expectation of the simulated background, scaled to n_perp rows.
  double expect = 0.0;
  {
    const double per_px = np.stray_rate + np.dark_rate + np.cic_rate;
    expect = per_px * static_cast<double>(so.rows);
  }
  const double tol = np.sigma_b * std::sqrt(static_cast<double>(so.rows)) /
                     std::sqrt(static_cast<double>(so.cols) * frames);
  EXPECT_NEAR(mean_est, expect, 4.0 * tol);
}
