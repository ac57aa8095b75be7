#include "atomloc/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace atomloc::io {

namespace fs = std::filesystem;

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

json to_json(const noise::NoiseParams& p) {
  return {{"sigma_b", p.sigma_b},       {"c1", p.c1},
          {"c2", p.c2},                 {"g", p.g},
          {"sigma_ro", p.sigma_ro},     {"cic_rate", p.cic_rate},
          {"dark_rate", p.dark_rate},   {"stray_rate", p.stray_rate},
          {"excess_factor", p.excess_factor}, {"intensity_noise", p.intensity_noise},
          {"prnu", p.prnu}};
}

noise::NoiseParams noise_from_json(const json& j, noise::NoiseParams p) {
  if (!j.is_object()) throw std::invalid_argument("noise: expected an object");
  for (const auto& [k, v] : j.items()) {
    double* dst = nullptr;
    if (k == "sigma_b") dst = &p.sigma_b;
    else if (k == "c1") dst = &p.c1;
    else if (k == "c2") dst = &p.c2;
    else if (k == "g") dst = &p.g;
    else if (k == "sigma_ro") dst = &p.sigma_ro;
    else if (k == "cic_rate") dst = &p.cic_rate;
    else if (k == "dark_rate") dst = &p.dark_rate;
    else if (k == "stray_rate") dst = &p.stray_rate;
    else if (k == "excess_factor") dst = &p.excess_factor;
    else if (k == "intensity_noise") dst = &p.intensity_noise;
    else if (k == "prnu") dst = &p.prnu;
    else throw std::invalid_argument("noise: unknown key '" + k + "'");
    if (!v.is_number()) throw std::invalid_argument("noise: '" + k + "' must be a number");
    *dst = v.get<double>();
  }
  p.validate();
  return p;
}

json to_json(const LatticeModel& l) { return {{"a_px", l.a_px}, {"delta_L", l.delta_L}, {"a_nm", l.a_nm}}; }

json to_json(const noise::BackgroundFitReport& r) {
  return {{"sigma_b", r.sigma_b},
          {"g", r.g},
          {"g_err", r.g_err},
          {"spurious_rate", r.spurious_rate},
          {"spurious_rate_err", r.spurious_rate_err},
          {"sigma_ro", r.sigma_ro},
          {"sigma_ro_err", r.sigma_ro_err},
          {"log_likelihood", r.log_likelihood},
          {"iterations", r.iterations},
          {"converged", r.converged},
          {"n_samples", r.n_samples},
          {"bin_width", r.bin_width}};
}

namespace {

std::string term_name(wavefront::ZernikeIndex t) {
  if (t == wavefront::kDefocus) return "defocus";
  if (t == wavefront::kAstigmatism) return "astigmatism";
  if (t == wavefront::kComa) return "coma";
  if (t == wavefront::kTrefoil) return "trefoil";
  if (t == wavefront::kSpherical) return "spherical";
  return "Z" + std::to_string(t.first) + "_" + std::to_string(t.second);
}

}  // namespace

json to_json(const wavefront::ZernikeWavefront& w) {
  json c = json::object(), a = json::object();
  for (const auto& [t, v] : w.coeffs) c[term_name(t)] = v;
  for (const auto& [t, v] : w.angles) a[term_name(t)] = v;
  return {{"coefficients", c}, {"angles", a}, {"na", w.na}, {"lambda_nm", w.lambda_nm},
          {"pupil_grid", w.pupil_grid}, {"rms_error", w.rms_error()}};
}

json to_json(const wavefront::WavefrontFitReport& r) {
  json j = to_json(r.wavefront);
  json e = json::object();
  for (const auto& [t, v] : r.coeff_err) e[term_name(t)] = v;
  j["uncertainties"] = e;
  j["na_err"] = r.na_err;
  j["shift_px"] = r.shift_px;
  j["residual_norm"] = r.residual_norm;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["quadratic_combination"] = r.quadratic_combination;
  j["quadratic_combination_err"] = r.quadratic_combination_err;
  j["flags"] = r.flags;
  json scans = json::array();
  for (const auto& s : r.angle_scans)
    scans.push_back({{"term", term_name(s.term)}, {"angles", s.angles}, {"costs", s.costs}, {"spread", s.spread}});
  j["angle_scans"] = scans;
  return j;
}

json to_json(const loc::AtomEstimate& e) {
  return {{"xi", e.xi},
          {"p", e.p},
          {"A", e.A},
          {"chi2", e.chi2},
          {"dof", e.dof},
          {"confidence", e.confidence},
          {"converged", e.converged},
          {"reliable", e.reliable},
          {"seed_order_violated", e.seed_order_violated},
          {"amplitude_at_bound", e.amplitude_at_bound},
          {"delta_L", e.delta_L},
          {"flags", e.flags}};
}

json to_json(const FrameResult& r, const std::string& calibration_id) {
  json rois = json::array();
  for (const auto& rr : r.rois) {
    json j = {{"range", {rr.roi.range.first, rr.roi.range.second}},
              {"integrated_e", rr.roi.integrated_e},
              {"m", rr.roi.atom_count},
              {"count_confidence", rr.roi.count_confidence},
              {"accepted", rr.roi.accepted},
              {"analyzed", rr.analyzed},
              {"seeds", rr.seeds}};
    if (rr.analyzed) {
      j["continuous"] = to_json(rr.continuous);
      if (!rr.discrete.xi.empty()) j["discrete"] = to_json(rr.discrete);
    }
    if (!rr.note.empty()) j["note"] = rr.note;
    rois.push_back(j);
  }
  json free = json::array();
  for (const auto& f : r.signal_free) free.push_back({f.first, f.second});
  return {{"rois", rois}, {"signal_free", free}, {"n_perp", r.n_perp}, {"calibration", calibration_id}};
}

json to_json(const loc::PhotonHistogramModel& m) {
  return {{"peak_spacing", m.peak_spacing}, {"w1", m.w1}, {"peak_widths", m.peak_widths},
          {"abundances", m.abundances}, {"background_density", m.background_density},
          {"lo", m.lo}, {"hi", m.hi}, {"log_likelihood", m.log_likelihood},
          {"iterations", m.iterations}, {"converged", m.converged}};
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  return json::parse(f);
}

namespace {

fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".json"); }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_frame(const fs::path& path, const PixelImage& img, const json& extra) {
  const bool bin = path.extension() == ".bin";
  if (bin) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (double v : img.counts()) {
      auto u = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
      f.write(reinterpret_cast<const char*>(&u), sizeof u);
    }
    if (!f) throw std::runtime_error("write failed: " + path.string());
  } else {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t r = 0; r < img.rows(); ++r) {
      for (std::size_t c = 0; c < img.cols(); ++c) f << (c ? "," : "") << fmt(img.at(c, r));
      f << '\n';
    }
  }
  json meta = extra;
  meta["cols"] = img.cols();
  meta["rows"] = img.rows();
  meta["delta_s_um"] = img.delta_s();
  meta["delta_p_um"] = img.delta_p();
  meta["exposure_s"] = img.exposure();
  meta["format"] = bin ? "float64-le" : "csv";
  write_json(sidecar(path), meta);
}

json read_sidecar(const fs::path& path) { return read_json(sidecar(path)); }

PixelImage read_frame(const fs::path& path) {
  const json meta = read_sidecar(path);
  const auto cols = meta.at("cols").get<std::size_t>();
  const auto rows = meta.at("rows").get<std::size_t>();
  std::vector<double> counts;
  counts.reserve(cols * rows);
  if (meta.at("format") == "float64-le") {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    std::uint64_t u;
    while (f.read(reinterpret_cast<char*>(&u), sizeof u)) {
      if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap64(u);
      counts.push_back(std::bit_cast<double>(u));
    }
  } else {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    while (std::getline(f, line)) {
      std::stringstream ss(line);
      std::string cell;
      while (std::getline(ss, cell, ',')) counts.push_back(std::stod(cell));
    }
  }
  if (counts.size() != cols * rows) throw std::runtime_error("frame size does not match its sidecar: " + path.string());
  return PixelImage(cols, rows, std::move(counts), meta.at("delta_s_um").get<double>(),
                    meta.at("delta_p_um").get<double>(), meta.at("exposure_s").get<double>());
}

void write_lsf(const fs::path& path, const ResponseLsf& lsf, const json& extra) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "x_px,value\n";
  for (std::size_t j = 0; j < lsf.samples().size(); ++j) f << fmt(lsf.x_at(j)) << ',' << fmt(lsf.samples()[j]) << '\n';
  json meta = extra;
  meta["s"] = lsf.upsampling();
  meta["delta_s_um"] = lsf.delta_s();
  meta["x0_px"] = lsf.x0();
  meta["patch_id"] = lsf.patch_id() ? json(*lsf.patch_id()) : json(nullptr);
  write_json(sidecar(path), meta);
}

ResponseLsf read_lsf(const fs::path& path) {
  const json meta = read_sidecar(path);
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::getline(f, line);
  std::vector<double> v;
  while (std::getline(f, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    v.push_back(std::stod(line.substr(comma + 1)));
  }
  std::optional<std::string> id;
  if (meta.contains("patch_id") && meta["patch_id"].is_string()) id = meta["patch_id"].get<std::string>();
  return ResponseLsf(std::move(v), meta.at("s").get<int>(), meta.at("delta_s_um").get<double>(),
                     meta.at("x0_px").get<double>(), id);
}

}  // namespace atomloc::io
