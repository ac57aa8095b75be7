#include "atomloc/bench.hpp"

#include "atomloc/defaults.hpp"
#include "atomloc/imaging.hpp"
#include "atomloc/io.hpp"
#include "atomloc/localization.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace atomloc::bench {

using json = nlohmann::json;

namespace {

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + key + "'");
  }
}

std::optional<wavefront::ZernikeIndex> term_of(const std::string& k) {
  if (k == "defocus") return wavefront::kDefocus;
  if (k == "astigmatism") return wavefront::kAstigmatism;
  if (k == "coma") return wavefront::kComa;
  if (k == "trefoil") return wavefront::kTrefoil;
  if (k == "spherical") return wavefront::kSpherical;
  return std::nullopt;
}

// Accepts flat coefficients ("defocus": 0.016) and the echoed form with "coefficients" and
// "angles" objects. "rms_error" in an echo is derived and ignored.
wavefront::ZernikeWavefront wavefront_from_json(const json& j, wavefront::ZernikeWavefront w) {
  if (!j.is_object()) throw ConfigError("config: 'wavefront' must be an object");
  auto terms = [](const json& obj, const std::string& where, std::map<wavefront::ZernikeIndex, double>& dst) {
    if (!obj.is_object()) throw ConfigError("config: 'wavefront." + where + "' must be an object");
    for (const auto& [k, v] : obj.items()) {
      const auto t = term_of(k);
      if (!t) throw ConfigError("config: unknown key 'wavefront." + where + "." + k + "'");
      dst[*t] = get_as<double>(v, k);
    }
  };
  for (const auto& [k, v] : j.items()) {
    if (const auto t = term_of(k)) w.coeffs[*t] = get_as<double>(v, k);
    else if (k == "coefficients") terms(v, k, w.coeffs);
    else if (k == "angles") terms(v, k, w.angles);
    else if (k == "na") w.na = get_as<double>(v, k);
    else if (k == "lambda_nm") w.lambda_nm = get_as<double>(v, k);
    else if (k == "pupil_grid") w.pupil_grid = get_as<int>(v, k);
    else if (k == "rms_error") continue;
    else throw ConfigError("config: unknown key 'wavefront." + k + "'");
  }
  return w;
}

const std::set<std::string> kScenarios = {"simulate", "reconstruct-lsf", "fit-wavefront", "analyze",
                                          "calibrate-lattice", "bench-fig7", "bench-precision",
                                          "benchmark", "calibrate"};
const std::set<std::string> kStochastic = {"simulate", "bench-fig7", "bench-precision", "benchmark"};

}  // namespace

void RunConfig::validate() const {
  if (!scenario.empty() && !kScenarios.count(scenario)) throw ConfigError("config: unknown scenario '" + scenario + "'");
  if (kStochastic.count(scenario) && !seed) throw ConfigError("config: scenario '" + scenario + "' needs a seed");
  if (frames == 0) throw ConfigError("config: frames must be > 0");
  if (cols == 0 || rows == 0 || bench_cols < 32) throw ConfigError("config: bad frame geometry");
  if (upsampling < 1) throw ConfigError("config: upsampling must be >= 1");
  if (lsf_model != "wavefront" && lsf_model != "gaussian") throw ConfigError("config: lsf_model must be 'wavefront' or 'gaussian'");
  if (frame_format != "bin" && frame_format != "csv") throw ConfigError("config: frame_format must be 'bin' or 'csv'");
  if (!(photons_per_atom >= 0.0) || !(exposure_s > 0.0)) throw ConfigError("config: photons and exposure must be positive");
  for (int s : spacings)
    if (s < 1) throw ConfigError("config: spacings must be >= 1");
  try {
    noise.validate();
    lattice.validate();
    wavefront.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "scenario") c.scenario = get_as<std::string>(v, k);
    else if (k == "seed") c.seed = get_as<std::uint64_t>(v, k);
    else if (k == "frames") c.frames = get_as<std::size_t>(v, k);
    else if (k == "out") c.out = get_as<std::string>(v, k);
    else if (k == "noise") {
      try {
        c.noise = io::noise_from_json(v, c.noise);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    } else if (k == "lattice") {
      if (!v.is_object()) throw ConfigError("config: 'lattice' must be an object");
      for (const auto& [lk, lv] : v.items()) {
        if (lk == "a_px") c.lattice.a_px = get_as<double>(lv, lk);
        else if (lk == "delta_L") c.lattice.delta_L = get_as<double>(lv, lk);
        else if (lk == "a_nm") c.lattice.a_nm = get_as<double>(lv, lk);
        else throw ConfigError("config: unknown key 'lattice." + lk + "'");
      }
    } else if (k == "exposure_s") c.exposure_s = get_as<double>(v, k);
    else if (k == "photons_per_atom") c.photons_per_atom = get_as<double>(v, k);
    else if (k == "cols") c.cols = get_as<std::size_t>(v, k);
    else if (k == "rows") c.rows = get_as<std::size_t>(v, k);
    else if (k == "bench_cols") c.bench_cols = get_as<std::size_t>(v, k);
    else if (k == "upsampling") c.upsampling = get_as<int>(v, k);
    else if (k == "lsf_model") c.lsf_model = get_as<std::string>(v, k);
    else if (k == "rms_psf_um") c.rms_psf_um = get_as<double>(v, k);
    else if (k == "wavefront") c.wavefront = wavefront_from_json(v, c.wavefront);
    else if (k == "spacings") c.spacings = get_as<std::vector<int>>(v, k);
    else if (k == "photon_levels") c.photon_levels = get_as<std::vector<double>>(v, k);
    else if (k == "sites") c.sites = get_as<std::vector<long>>(v, k);
    else if (k == "loss_probability") c.loss_probability = get_as<double>(v, k);
    else if (k == "frame_format") c.frame_format = get_as<std::string>(v, k);
    else if (k == "inputs") c.inputs = get_as<std::vector<std::string>>(v, k);
    else if (k == "lsf") c.lsf_path = get_as<std::string>(v, k);
    else if (k == "distances") c.distances = get_as<std::vector<double>>(v, k);
    else if (k == "known_atoms") c.known_atoms = get_as<int>(v, k);
    else throw ConfigError("config: unknown key '" + k + "'");
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j = {{"scenario", c.scenario},
            {"frames", c.frames},
            {"out", c.out},
            {"noise", io::to_json(c.noise)},
            {"lattice", io::to_json(c.lattice)},
            {"exposure_s", c.exposure_s},
            {"photons_per_atom", c.photons_per_atom},
            {"cols", c.cols},
            {"rows", c.rows},
            {"bench_cols", c.bench_cols},
            {"upsampling", c.upsampling},
            {"lsf_model", c.lsf_model},
            {"rms_psf_um", c.rms_psf_um},
            {"wavefront", io::to_json(c.wavefront)},
            {"spacings", c.spacings},
            {"photon_levels", c.photon_levels},
            {"sites", c.sites},
            {"loss_probability", c.loss_probability},
            {"frame_format", c.frame_format},
            {"inputs", c.inputs},
            {"lsf", c.lsf_path},
            {"distances", c.distances},
            {"known_atoms", c.known_atoms}};
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  return j;
}

LsfPair make_lsf(const RunConfig& c, double half_width_px) {
  const double ds = defaults::kSamplingSpacingUm;
  ResponseLsf optical;
  if (c.lsf_model == "gaussian") {
    optical = gaussian_lsf(c.rms_psf_um / ds, c.upsampling, ds, half_width_px);
  } else {
    wavefront::LsfSampling smp;
    smp.s = c.upsampling;
    smp.delta_s_um = ds;
    smp.half_width_px = half_width_px;
    optical = wavefront::lsf_from_wavefront(c.wavefront, smp);
  }
  return {optical, pixel_convolve(optical, defaults::kPixelApertureUm)};
}

namespace {

template <typename F>
void parallel_for(std::size_t n, F&& body) {
  const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  const std::size_t nt = std::min(hw, n);
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < nt; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += nt) body(i);
    });
  for (auto& th : pool) th.join();
}

const RoiResult* single_roi(const FrameResult& r) {
  return r.rois.size() == 1 && r.rois.front().analyzed ? &r.rois.front() : nullptr;
}

bool distances_match(const std::vector<double>& xi, double a, int d) {
  for (std::size_t l = 0; l + 1 < xi.size(); ++l)
    if (std::lround((xi[l + 1] - xi[l]) / a) != d) return false;
  return true;
}

double one_atom_width(const noise::NoiseParams& n, double photons, int n_perp) {
  return std::sqrt(n.c1 * n.c1 * photons + n_perp * n.sigma_b * n.sigma_b * 4.0 * defaults::abbe_radius_px());
}

// Noiseless runs have a zero-width one-atom peak; leave the amplitudes unbounded then.
loc::AmplitudeBounds amplitude_bounds(const noise::NoiseParams& n, double photons, int n_perp) {
  const double w = one_atom_width(n, photons, n_perp);
  return w > 0.0 ? loc::AmplitudeBounds::from_histogram(photons, w) : loc::AmplitudeBounds{};
}

}  // namespace

Fig7Result run_benchmark_fig7(const RunConfig& c) {
  c.validate();
  if (!c.seed) throw ConfigError("bench-fig7 needs a seed");
  const auto lsfs = make_lsf(c);
  const ResponseLsf gauss = gaussian_substitute(lsfs.ccd);
  const double a = c.lattice.a_px;
  const double photons = c.photons_per_atom * c.exposure_s;
  const auto bounds = amplitude_bounds(c.noise, photons, static_cast<int>(c.rows));
  Fig7Result res;
  if (c.frames < 100) res.warnings.push_back("fewer than 100 frames per spacing: binomial errors above 3%");

  imaging::SimulationOptions so;
  so.cols = c.bench_cols;
  so.rows = c.rows;
  so.exposure_s = c.exposure_s;
  so.loss_probability = c.loss_probability;
  Calibration cal;
  cal.lsf = lsfs.ccd;
  cal.noise = c.noise;
  cal.lattice = c.lattice;
  cal.bounds = bounds;
  Calibration cal_gauss = cal;
  cal_gauss.lsf = gauss;

  for (int d : c.spacings) {
    std::vector<std::array<char, 3>> ok(c.frames, {0, 0, 0});
    parallel_for(c.frames, [&](std::size_t f) {
      auto rng = imaging::make_rng(*c.seed, (static_cast<std::uint64_t>(d) << 32) | f);
      std::uniform_real_distribution<double> u(0.0, a);
      const double delta = u(rng);
      const double centre = 0.5 * static_cast<double>(c.bench_cols);
      AtomConfig atoms;
      for (int l = 0; l < 4; ++l) {
        atoms.positions.push_back(centre - 1.5 * d * a + delta + l * d * a);
        atoms.amplitudes.push_back(photons);
      }
      const auto img = imaging::simulate_exposure(atoms, lsfs.optical, c.noise, c.lattice, rng, so);
      const auto prof = imaging::integrate_transverse(img);
      // analyze_profile reports ROI failures in the result; anything thrown counts as a miss
      try {
        AnalyzeOptions opt;
        opt.known_atoms = 4;
        opt.merge_rois = true;
        const auto res_true = analyze_profile(prof, cal, opt);
        if (const auto* r = single_roi(res_true)) {
          ok[f][1] = distances_match(r->continuous.xi, a, d);
          bool good = r->discrete.p.size() == 4;
          for (std::size_t l = 0; good && l + 1 < r->discrete.p.size(); ++l)
            good = r->discrete.p[l + 1] - r->discrete.p[l] == d;
          ok[f][0] = good;
        }
        opt.refine = false;
        const auto res_gauss = analyze_profile(prof, cal_gauss, opt);
        if (const auto* r = single_roi(res_gauss))
          ok[f][2] = distances_match(r->continuous.xi, a, d);
      } catch (const std::exception&) {
      }
    });
    const char* names[] = {"discrete", "continuous", "continuous_gaussian"};
    for (int m = 0; m < 3; ++m) {
      double s = 0.0;
      for (const auto& o : ok) s += o[static_cast<std::size_t>(m)];
      const double n = static_cast<double>(c.frames);
      const double p = s / n;
      res.rows.push_back({d, names[m], p, std::sqrt(p * (1.0 - p) / n), c.frames});
    }
  }
  return res;
}

std::vector<PrecisionRow> run_precision_sweep(const RunConfig& c) {
  c.validate();
  if (!c.seed) throw ConfigError("bench-precision needs a seed");
  const double ds = defaults::kSamplingSpacingUm;
  const ResponseLsf optical = gaussian_lsf(c.rms_psf_um / ds, c.upsampling, ds, 80.0);
  const ResponseLsf ccd = pixel_convolve(optical, defaults::kPixelApertureUm);
  const int n_perp = static_cast<int>(c.rows);
  imaging::SimulationOptions so;
  so.cols = c.bench_cols;
  so.rows = c.rows;
  so.exposure_s = c.exposure_s;
  std::vector<PrecisionRow> rows;
  for (std::size_t level = 0; level < c.photon_levels.size(); ++level) {
    const double N = c.photon_levels[level];
    const auto bounds = amplitude_bounds(c.noise, N, n_perp);
    Calibration cal;
    cal.lsf = ccd;
    cal.noise = c.noise;
    cal.lattice = c.lattice;
    cal.bounds = bounds;
    std::vector<double> err(c.frames, std::numeric_limits<double>::quiet_NaN());
    parallel_for(c.frames, [&](std::size_t f) {
      auto rng = imaging::make_rng(*c.seed, (static_cast<std::uint64_t>(level + 1) << 40) | f);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      AtomConfig atoms;
      atoms.positions = {0.5 * static_cast<double>(c.bench_cols) + u(rng)};
      atoms.amplitudes = {N};
      const auto img = imaging::simulate_exposure(atoms, optical, c.noise, c.lattice, rng, so);
      AnalyzeOptions opt;
      opt.known_atoms = 1;
      opt.merge_rois = true;
      opt.refine = false;
      try {
        const auto res = analyze_profile(imaging::integrate_transverse(img), cal, opt);
        if (const auto* r = single_roi(res))
          err[f] = (r->continuous.xi[0] - atoms.positions[0]) * ds * 1e3;
      } catch (const std::exception&) {
      }
    });
    PrecisionRow r;
    r.photons = N;
    double s = 0.0, s2 = 0.0;
    for (double e : err)
      if (std::isfinite(e)) {
        s += e;
        s2 += e * e;
        ++r.n_frames;
      }
    const double n = static_cast<double>(std::max<std::size_t>(r.n_frames, 1));
    r.bias_nm = s / n;
    r.rms_nm = std::sqrt(s2 / n);
    r.rms_stderr_nm = r.rms_nm / std::sqrt(2.0 * n);
    r.bound_nm = 1e3 * loc::precision_bound(c.rms_psf_um, defaults::kPixelApertureUm, N, c.noise.sigma_b, n_perp, true);
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

std::string fig7_csv(const Fig7Result& r) {
  std::ostringstream os;
  os << "separation_sites,method,success_rate,stderr,n_frames\n";
  for (const auto& row : r.rows)
    os << row.separation_sites << ',' << row.method << ',' << num(row.success_rate) << ',' << num(row.stderr_)
       << ',' << row.n_frames << '\n';
  return os.str();
}

std::string precision_csv(const std::vector<PrecisionRow>& rows) {
  std::ostringstream os;
  os << "N_photons,rms_error_nm,rms_stderr_nm,bound_nm,bias_nm,n_frames\n";
  for (const auto& r : rows)
    os << num(r.photons) << ',' << num(r.rms_nm) << ',' << num(r.rms_stderr_nm) << ',' << num(r.bound_nm) << ','
       << num(r.bias_nm) << ',' << r.n_frames << '\n';
  return os.str();
}

void emit_reports(const RunConfig& c, const std::string& name, const std::string& contents, const json& extra) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + c.out + ": " + ec.message());
  {
    std::ofstream f(fs::path(c.out) / name);
    if (!f) throw std::runtime_error("cannot write " + (fs::path(c.out) / name).string());
    f << contents;
  }
  const json cfg = to_json(c);
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << io::fnv1a(cfg.dump());
  json meta = extra;
  meta["config"] = cfg;
  meta["config_hash"] = hash.str();
  meta["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  meta["version"] = kVersion;
  meta["noise_effective"] = io::to_json(c.noise);
  meta["outputs"] = json::array({name});
  io::write_json(fs::path(c.out) / (fs::path(name).stem().string() + ".metadata.json"), meta);
}

}  // namespace atomloc::bench
