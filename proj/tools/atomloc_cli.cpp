#include "atomloc/bench.hpp"
#include "atomloc/defaults.hpp"
#include "atomloc/imaging.hpp"
#include "atomloc/io.hpp"
#include "atomloc/localization.hpp"
#include "atomloc/lsf.hpp"
#include "atomloc/pipeline.hpp"
#include "atomloc/wavefront.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace atomloc;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kCalibrationMissing = 3, kAcceptance = 4 };

struct CalibrationMissing : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> frames;
  std::string out;
  std::vector<std::string> inputs;
  std::string lsf;
};

bench::RunConfig resolve(const Common& a, const std::string& scenario) {
  bench::RunConfig c = a.config.empty() ? bench::RunConfig{} : bench::load_config(a.config);
  c.scenario = scenario;
  if (a.seed) c.seed = a.seed;
  if (a.frames) c.frames = *a.frames;
  if (!a.out.empty()) c.out = a.out;
  if (!a.inputs.empty()) c.inputs = a.inputs;
  if (!a.lsf.empty()) c.lsf_path = a.lsf;
  c.validate();
  return c;
}

std::string frame_name(std::size_t i, const std::string& format) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%05zu.%s", i, format.c_str());
  return buf;
}

int cmd_simulate(const bench::RunConfig& c) {
  const auto lsfs = bench::make_lsf(c);
  std::vector<long> sites = c.sites;
  if (sites.empty()) {
    const long mid = std::lround(0.5 * static_cast<double>(c.cols) / c.lattice.a_px);
    sites = {mid - 3, mid - 2, mid, mid + 3};
  }
  const double photons = c.photons_per_atom * c.exposure_s;
  const std::vector<double> amps(sites.size(), photons);
  const auto atoms = place_on_lattice(sites, c.lattice, amps);
  imaging::SimulationOptions so;
  so.cols = c.cols;
  so.rows = c.rows;
  so.exposure_s = c.exposure_s;
  so.loss_probability = c.loss_probability;
  fs::create_directories(c.out);
  for (std::size_t f = 0; f < c.frames; ++f) {
    auto rng = imaging::make_rng(*c.seed, f);
    const auto img = imaging::simulate_exposure(atoms, lsfs.optical, c.noise, c.lattice, rng, so);
    io::write_frame(fs::path(c.out) / frame_name(f, c.frame_format), img,
                    {{"positions_px", atoms.positions}, {"sites", sites}, {"amplitudes", atoms.amplitudes},
                     {"seed", *c.seed}, {"frame", f}});
  }
  io::write_lsf(fs::path(c.out) / "lsf_ccd.csv", lsfs.ccd, {{"model", c.lsf_model}});
  bench::emit_reports(c, "simulate.json", io::to_json(c.noise).dump(2) + "\n",
                      {{"frames", c.frames}});
  return kOk;
}

// Single-emitter windows cut out of background-subtracted frame profiles.
std::vector<Profile1D> isolated_profiles(const bench::RunConfig& c) {
  std::vector<Profile1D> out;
  const long half = static_cast<long>(std::ceil(11.0 * defaults::abbe_radius_px()));
  for (const auto& path : c.inputs) {
    const auto img = io::read_frame(path);
    loc::Segmentation seg;
    const auto prof =
        loc::auto_subtract_background(imaging::integrate_transverse(img), c.noise, {}, &seg);
    for (const auto& r : seg.rois) {
      const long centre = static_cast<long>(r.range.first + r.range.second) / 2;
      const long lo = std::max(0L, centre - half);
      const long hi = std::min(static_cast<long>(prof.size()), centre + half + 1);
      Profile1D p;
      p.values.assign(prof.values.begin() + lo, prof.values.begin() + hi);
      p.origin_px = static_cast<std::size_t>(lo);
      p.background_subtracted = true;
      p.n_perp = prof.n_perp;
      out.push_back(std::move(p));
    }
  }
  return out;
}

int cmd_reconstruct(const bench::RunConfig& c) {
  if (c.inputs.empty()) throw bench::ConfigError("reconstruct-lsf: no input frames");
  const auto profiles = isolated_profiles(c);
  if (profiles.empty()) throw std::runtime_error("reconstruct-lsf: no isolated emitters found");
  lsf::ReconstructOptions opt;
  opt.s = c.upsampling;
  const auto r = lsf::reconstruct_lsf(profiles, opt);
  fs::create_directories(c.out);
  io::write_lsf(fs::path(c.out) / "lsf_ccd.csv", r.lsf,
                {{"iterations", r.iterations}, {"converged", r.converged}, {"n_profiles", profiles.size()}});
  bench::emit_reports(c, "reconstruct.json",
                      json({{"iterations", r.iterations},
                            {"converged", r.converged},
                            {"change_trace", r.change_trace},
                            {"n_profiles", profiles.size()},
                            {"fwhm_px", r.lsf.fwhm_px()}})
                              .dump(2) + "\n",
                      json::object());
  return r.converged ? kOk : kAcceptance;
}

ResponseLsf require_lsf(const bench::RunConfig& c) {
  if (c.lsf_path.empty() || !fs::exists(c.lsf_path))
    throw CalibrationMissing("no LSF calibration at '" + c.lsf_path + "'");
  return io::read_lsf(c.lsf_path);
}

int cmd_fit_wavefront(const bench::RunConfig& c) {
  const auto lsf = require_lsf(c);
  wavefront::FitOptions opt;
  opt.delta_p_um = defaults::kPixelApertureUm;
  opt.lambda_nm = c.wavefront.lambda_nm;
  const auto rep = wavefront::fit_wavefront(lsf, opt);
  const auto st = wavefront::strehl_and_rms(rep.wavefront);
  json j = io::to_json(rep);
  j["strehl"] = st.strehl;
  j["rms_error"] = st.rms_error;
  bench::emit_reports(c, "wavefront.json", j.dump(2) + "\n", json::object());
  return rep.converged ? kOk : kAcceptance;
}

int cmd_analyze(const bench::RunConfig& c) {
  if (c.inputs.empty()) throw bench::ConfigError("analyze: no input frames");
  Calibration cal;
  cal.lsf = require_lsf(c);
  cal.noise = c.noise;
  cal.lattice = c.lattice;
  cal.photons_per_atom = c.photons_per_atom * c.exposure_s;
  cal.bounds = loc::AmplitudeBounds::from_histogram(
      cal.photons_per_atom,
      std::sqrt(c.noise.c1 * c.noise.c1 * cal.photons_per_atom +
                static_cast<double>(c.rows) * c.noise.sigma_b * c.noise.sigma_b * 4.0 * defaults::abbe_radius_px()));
  std::ostringstream hash;
  hash << std::hex << io::fnv1a(fs::absolute(c.lsf_path).string());
  cal.id = hash.str();
  AnalyzeOptions opt;
  opt.known_atoms = c.known_atoms;
  json all = json::array();
  for (const auto& path : c.inputs) {
    const auto img = io::read_frame(path);
    auto j = io::to_json(analyze_frame(img, cal, opt), cal.id);
    j["input"] = path;
    all.push_back(j);
  }
  bench::emit_reports(c, "analysis.json", all.dump(2) + "\n", json::object());
  return kOk;
}

int cmd_calibrate_lattice(const bench::RunConfig& c) {
  const auto cal = loc::calibrate_lattice(c.distances, c.lattice.a_nm);
  json j = {{"lattice", io::to_json(cal.lattice)},
            {"residual_rms", cal.residual_rms},
            {"resultant", cal.resultant},
            {"n_samples", cal.n_samples}};
  bench::emit_reports(c, "lattice.json", j.dump(2) + "\n", json::object());
  return kOk;
}

int cmd_fig7(const bench::RunConfig& c) {
  const auto r = bench::run_benchmark_fig7(c);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
  bench::emit_reports(c, "fig7.csv", bench::fig7_csv(r), {{"warnings", r.warnings}});
  return kOk;
}

int cmd_precision(const bench::RunConfig& c) {
  const auto rows = bench::run_precision_sweep(c);
  bench::emit_reports(c, "precision.csv", bench::precision_csv(rows), json::object());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and super-resolved localization of atoms on a 1D lattice"};
  app.set_version_flag("--version", std::string(bench::kVersion));
  app.require_subcommand(1);
  Common a;
  std::uint64_t seed = 0;
  std::size_t frames = 0;
  struct Sub {
    std::string name;
    std::string help;
    int (*run)(const bench::RunConfig&);
  };
  const std::vector<Sub> subs = {
      {"simulate", "simulate EMCCD frames", cmd_simulate},
      {"reconstruct-lsf", "reconstruct the detector LSF from isolated emitters", cmd_reconstruct},
      {"fit-wavefront", "fit a Zernike wavefront to an LSF", cmd_fit_wavefront},
      {"analyze", "localize atoms in frames", cmd_analyze},
      {"calibrate-lattice", "estimate lattice constant and phase from distances", cmd_calibrate_lattice},
      {"bench-fig7", "distance-recovery success rate versus spacing", cmd_fig7},
      {"bench-precision", "localization precision versus photon number", cmd_precision},
  };
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("--config", a.config, "JSON configuration")->check(CLI::ExistingFile);
    sc->add_option("--seed", seed, "RNG seed");
    sc->add_option("--frames", frames, "number of frames");
    sc->add_option("--out", a.out, "output directory");
    sc->add_option("--input", a.inputs, "input frame files");
    sc->add_option("--lsf", a.lsf, "LSF calibration file");
    apps.push_back(sc);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!apps[i]->parsed()) continue;
    if (apps[i]->count("--seed")) a.seed = seed;
    if (apps[i]->count("--frames")) a.frames = frames;
    try {
      return subs[i].run(resolve(a, subs[i].name));
    } catch (const bench::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kConfig;
    } catch (const CalibrationMissing& e) {
      std::cerr << "calibration missing: " << e.what() << '\n';
      return kCalibrationMissing;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kOther;
    }
  }
  return kOther;
}
