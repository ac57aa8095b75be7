#pragma once

#include "atomloc/noise.hpp"
#include "atomloc/response.hpp"
#include "atomloc/types.hpp"
#include "atomloc/wavefront.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace atomloc::bench {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::size_t frames = 1000;
  std::string out = "out";
  noise::NoiseParams noise = noise::NoiseParams::reference_camera();
  LatticeModel lattice;
  double exposure_s = 1.0;
  double photons_per_atom = 1300.0;
  std::size_t cols = 512;
  std::size_t rows = 40;
  std::size_t bench_cols = 128;
  int upsampling = 8;
  /// "wavefront" (aberrated pupil) or "gaussian" (rms_psf_um).
  std::string lsf_model = "wavefront";
  double rms_psf_um = 1.5;
  wavefront::ZernikeWavefront wavefront = wavefront::ZernikeWavefront::reference_objective();
  std::vector<int> spacings = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> photon_levels = {325.0, 650.0, 1300.0, 2600.0, 5200.0, 10400.0};
  std::vector<long> sites;            // simulate: occupied sites
  double loss_probability = 0.0;
  std::string frame_format = "bin";
  std::vector<std::string> inputs;    // frame files for analyze / reconstruct-lsf
  std::string lsf_path;               // LSF CSV for analyze / fit-wavefront
  std::vector<double> distances;      // calibrate-lattice input (px)
  int known_atoms = 0;

  /// Stochastic scenarios need a seed.
  void validate() const;
};

/// Parses a JSON document; unknown keys raise ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
nlohmann::json to_json(const RunConfig& c);

/// Optical LSF selected by the configuration and its pixel-convolved counterpart.
struct LsfPair {
  ResponseLsf optical;
  ResponseLsf ccd;
};
LsfPair make_lsf(const RunConfig& c, double half_width_px = 80.0);

struct Fig7Row {
  int separation_sites = 0;
  std::string method;
  double success_rate = 0.0;
  double stderr_ = 0.0;
  std::size_t n_frames = 0;
};

struct Fig7Result {
  std::vector<Fig7Row> rows;
  std::vector<std::string> warnings;
};

/// Four equally spaced atoms per frame; methods "discrete", "continuous", "continuous_gaussian".
Fig7Result run_benchmark_fig7(const RunConfig& c);

struct PrecisionRow {
  double photons = 0.0;
  double rms_nm = 0.0;
  double rms_stderr_nm = 0.0;
  double bound_nm = 0.0;
  double bias_nm = 0.0;
  std::size_t n_frames = 0;
};

/// Single-atom RMS localization error against the analytic bound (Gaussian PSF of rms_psf_um).
std::vector<PrecisionRow> run_precision_sweep(const RunConfig& c);

std::string fig7_csv(const Fig7Result& r);
std::string precision_csv(const std::vector<PrecisionRow>& rows);

/// Writes `name` under the output directory plus metadata.json (config hash, seed, version).
void emit_reports(const RunConfig& c, const std::string& name, const std::string& contents,
                  const nlohmann::json& extra = nlohmann::json::object());

inline constexpr const char* kVersion = "0.1.0";

}  // namespace atomloc::bench
