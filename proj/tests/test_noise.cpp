#include "atomloc/defaults.hpp"
#include "atomloc/imaging.hpp"
#include "atomloc/noise.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace atomloc;
using noise::NoiseParams;

TEST(SigmaModel, ZeroSignalIsBackground) {
  const auto p = NoiseParams::reference_camera();
  EXPECT_DOUBLE_EQ(noise::sigma_model(0.0, p), p.sigma_b);
}

TEST(SigmaModel, ReferenceValue) {
  NoiseParams p;
  p.sigma_b = 0.6;
  p.c1 = std::sqrt(2.0);
  EXPECT_NEAR(noise::sigma_model(1300.0, p), std::sqrt(0.36 + 2600.0), 1e-12);
  EXPECT_NEAR(noise::sigma_model(1300.0, p), 51.0, 0.01);
}

TEST(SigmaModel, LinearTermOffByDefault) { EXPECT_EQ(NoiseParams::reference_camera().c2, 0.0); }

TEST(TotalVariance, AllChannelsZero) {
  NoiseParams p = NoiseParams::shot_noise_only();
  p.c1 = 0.0;
  EXPECT_EQ(noise::total_variance(0.0, p), 0.0);
}

TEST(TotalVariance, ConsistentWithSigmaModel) {
  auto p = NoiseParams::reference_camera();
  p.sigma_b = p.implied_sigma_b();
  for (double s : {0.0, 1.0, 30.0, 1300.0})
    EXPECT_NEAR(noise::total_variance(s, p), std::pow(noise::sigma_model(s, p), 2), 1e-12);
}

TEST(TotalVariance, ExcessFactorDoublesShotNoise) {
  auto p = NoiseParams::shot_noise_only();
  p.excess_factor = 1.0;
  p.c1 = 1.0;
  const double v1 = noise::total_variance(500.0, p);
  p.excess_factor = std::sqrt(2.0);
  p.c1 = std::sqrt(2.0);
  EXPECT_NEAR(noise::total_variance(500.0, p) / v1, 2.0, 1e-12);
}

TEST(NoiseParams, ReferenceBackgroundBudget) {
  const auto p = NoiseParams::reference_camera();
  EXPECT_NEAR(p.implied_sigma_b(), 0.6, 1e-9);
  EXPECT_NEAR(p.sigma_ro / p.g, 0.03, 1e-12);
  // Stray light dominates the budget.
  EXPECT_GT(p.excess_factor * std::sqrt(p.stray_rate), 0.5);
}

TEST(NoiseParams, ValidateRejectsNegatives) {
  auto p = NoiseParams::reference_camera();
  p.cic_rate = -1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(BackgroundFit, PureNormalSamples) {
  auto rng = imaging::make_rng(12);
  const double ro = 0.2;
  std::normal_distribution<double> n(0.0, ro);
  std::vector<double> s(200000);
  for (double& v : s) v = n(rng);
  const auto f = noise::fit_background_histogram(s, 1000.0, 0.02);
  EXPECT_LT(f.spurious_rate, 1e-3);
  EXPECT_NEAR(f.sigma_ro / 1000.0, ro, 0.03 * ro);
}

TEST(BackgroundFit, RoundTripGainAndCic) {
  auto p = NoiseParams::reference_camera();
  p.stray_rate = 0.0;
  p.dark_rate = 0.0;
  p.cic_rate = 0.05;
  p.sigma_ro = 0.03 * p.g;
  imaging::SimulationOptions so;
  so.cols = 500;
  so.rows = 400;
  const auto img = imaging::simulate_exposure(AtomConfig{}, gaussian_lsf(3.0, 8, defaults::kSamplingSpacingUm, 20.0),
                                              p, LatticeModel{}, 17, so);
  const double conversion = 2500.0;
  std::vector<double> s(img.counts().begin(), img.counts().end());
  for (double& v : s) v *= p.g / conversion;
  const auto f = noise::fit_background_histogram(s, conversion);
  EXPECT_NEAR(f.g / p.g, 1.0, 0.05);
  EXPECT_NEAR(f.spurious_rate / p.cic_rate, 1.0, 0.05);
}

TEST(BackgroundFit, TooFewSamplesThrows) {
  std::vector<double> s(10, 0.0);
  EXPECT_THROW(noise::fit_background_histogram(s, 1000.0), std::invalid_argument);
}

TEST(SnrCurve, NoiselessStacksHaveZeroRms) {
  std::vector<PixelImage> stack;
  for (int i = 0; i < 3; ++i) {
    PixelImage img(10, 2, 0.3, 0.29, 1.0);
    for (std::size_t k = 0; k < 20; ++k) img.counts()[k] = static_cast<double>(k);
    stack.push_back(img);
  }
  const std::vector<std::vector<PixelImage>> stacks = {stack};
  const std::vector<double> edges = {-1.0, 5.0, 25.0};
  const auto c = noise::estimate_snr_curve(stacks, edges);
  for (const auto& b : c.bins) EXPECT_EQ(b.rms_noise, 0.0);
}

TEST(SnrCurve, MatchesSigmaModel) {
  const auto p = NoiseParams::reference_camera();
  const double ds = defaults::kSamplingSpacingUm;
  const auto lsf = gaussian_lsf(0.9 / ds, 8, ds, 40.0);
  imaging::SimulationOptions so;
  so.cols = 64;
  so.rows = 16;
  so.transverse_sigma_rows = 2.0;
  const AtomConfig atoms{{20.0, 44.0}, {6000.0, 3000.0}};
  std::vector<PixelImage> stack;
  for (int f = 0; f < 400; ++f) {
    auto rng = imaging::make_rng(31, f);
    stack.push_back(imaging::simulate_exposure(atoms, lsf, p, LatticeModel{}, rng, so));
  }
  const double offset = p.stray_rate + p.cic_rate + p.dark_rate;
  const std::vector<std::vector<PixelImage>> stacks = {stack};
  const std::vector<double> edges = {-0.5, 0.5, 5.0, 20.0, 60.0, 200.0};
  const auto c = noise::estimate_snr_curve(stacks, edges, offset);
  int checked = 0;
  for (const auto& b : c.bins) {
    if (b.count < 5) continue;
    ++checked;
    const double model = noise::sigma_model(b.mean_signal, p);
    EXPECT_NEAR(b.rms_noise, model, 2.0 * b.rms_stderr + 0.02 * model) << "signal " << b.mean_signal;
  }
  EXPECT_GE(checked, 3);
}
