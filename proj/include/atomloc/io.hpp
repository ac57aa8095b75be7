#pragma once

#include "atomloc/localization.hpp"
#include "atomloc/noise.hpp"
#include "atomloc/pipeline.hpp"
#include "atomloc/response.hpp"
#include "atomloc/types.hpp"
#include "atomloc/wavefront.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace atomloc::io {

using json = nlohmann::json;

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data);

json to_json(const noise::NoiseParams& p);
noise::NoiseParams noise_from_json(const json& j, noise::NoiseParams base = noise::NoiseParams::reference_camera());
json to_json(const LatticeModel& l);
json to_json(const noise::BackgroundFitReport& r);
json to_json(const wavefront::WavefrontFitReport& r);
json to_json(const wavefront::ZernikeWavefront& w);
json to_json(const loc::AtomEstimate& e);
json to_json(const FrameResult& r, const std::string& calibration_id);
json to_json(const loc::PhotonHistogramModel& m);

/**
 * Writes counts as little-endian float64 (".bin") or CSV (anything else), row-major, plus
 * "<path>.json" with the geometry and `extra` metadata.
 */
void write_frame(const std::filesystem::path& path, const PixelImage& img, const json& extra = json::object());
PixelImage read_frame(const std::filesystem::path& path);
json read_sidecar(const std::filesystem::path& path);

/// CSV of (x_px, value in 1/um) plus "<path>.json" with s, delta_s, patch_id and `extra`.
void write_lsf(const std::filesystem::path& path, const ResponseLsf& lsf, const json& extra = json::object());
ResponseLsf read_lsf(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

}  // namespace atomloc::io
