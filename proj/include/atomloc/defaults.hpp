#pragma once

#include <cmath>

// Physical defaults of the reference single-atom microscope. All lengths in the object plane.
namespace atomloc::defaults {

inline constexpr double kFluorescenceWavelengthNm = 852.0;
inline constexpr double kNumericalAperture = 0.228;
inline constexpr double kAbbeRadiusUm = 1.9;
inline constexpr double kLatticeConstantNm = 433.0;
inline constexpr double kLatticeConstantPx = 1.47;
inline constexpr double kCcdPixelUm = 16.0;
inline constexpr double kMagnification = 55.0;
/// Projected pixel aperture.
inline constexpr double kPixelApertureUm = kCcdPixelUm / kMagnification;
/// Pixel pitch in the object plane, tied to the lattice calibration.
inline constexpr double kSamplingSpacingUm = kLatticeConstantNm * 1e-3 / kLatticeConstantPx;
inline constexpr double kRmsPsfUm = 1.5;
inline constexpr double kPhotonsPerAtom = 1300.0;  // per 1 s exposure
inline constexpr double kExposureS = 1.0;
inline constexpr int kRowsPerProfile = 40;
inline constexpr int kSensorColumns = 512;
inline constexpr int kUpsampling = 8;
/// Low-pass cutoff relative to the Abbe frequency.
inline constexpr double kLowpassFactor = 1.2;
inline constexpr int kWienerIterations = 10;
inline constexpr int kEmStages = 536;
inline constexpr double kImpactIonizationProbability = 0.015;

/// Mean EM gain of a cascade of kEmStages stages.
inline double em_gain() {
  return std::pow(1.0 + kImpactIonizationProbability, kEmStages);
}

inline double abbe_radius_px() { return kAbbeRadiusUm / kSamplingSpacingUm; }

}  // namespace atomloc::defaults
