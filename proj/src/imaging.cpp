#include "atomloc/imaging.hpp"

#include "atomloc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace atomloc {

PixelImage::PixelImage(std::size_t cols, std::size_t rows, double delta_s_um, double delta_p_um,
                       double exposure_s)
    : PixelImage(cols, rows, std::vector<double>(cols * rows, 0.0), delta_s_um, delta_p_um,
                 exposure_s) {}

PixelImage::PixelImage(std::size_t cols, std::size_t rows, std::vector<double> counts,
                       double delta_s_um, double delta_p_um, double exposure_s)
    : cols_(cols), rows_(rows), counts_(std::move(counts)), delta_s_(delta_s_um),
      delta_p_(delta_p_um), exposure_(exposure_s) {
  validate();
}

void PixelImage::validate() const {
  if (cols_ == 0 || rows_ == 0) throw std::invalid_argument("PixelImage: empty grid");
  if (counts_.size() != cols_ * rows_) throw std::invalid_argument("PixelImage: size mismatch");
  if (!std::isfinite(delta_s_) || !std::isfinite(delta_p_) || !std::isfinite(exposure_))
    throw std::invalid_argument("PixelImage: non-finite geometry");
  if (!(delta_s_ > 0.0) || !(delta_p_ > 0.0))
    throw std::invalid_argument("PixelImage: spacings must be positive");
  if (delta_p_ > delta_s_) throw std::invalid_argument("PixelImage: delta_p exceeds delta_s");
  for (double v : counts_)
    if (!std::isfinite(v)) throw std::invalid_argument("PixelImage: non-finite count");
}

void Profile1D::validate() const {
  if (values.empty()) throw std::invalid_argument("Profile1D: empty");
  if (n_perp < 1) throw std::invalid_argument("Profile1D: n_perp < 1");
}

void AtomConfig::validate() const {
  if (positions.size() != amplitudes.size())
    throw std::invalid_argument("AtomConfig: positions/amplitudes size mismatch");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!std::isfinite(positions[i]) || !std::isfinite(amplitudes[i]))
      throw std::invalid_argument("AtomConfig: non-finite entry");
    if (amplitudes[i] < 0.0) throw std::invalid_argument("AtomConfig: negative amplitude");
    if (i > 0 && !(positions[i] > positions[i - 1]))
      throw std::invalid_argument("AtomConfig: positions must be strictly increasing");
  }
}

void LatticeModel::validate() const {
  if (!(a_px > 0.0) || !std::isfinite(a_px)) throw std::invalid_argument("LatticeModel: a_px must be > 0");
  if (!std::isfinite(delta_L)) throw std::invalid_argument("LatticeModel: non-finite offset");
}

AtomConfig place_on_lattice(std::span<const long> sites, const LatticeModel& lattice,
                            std::span<const double> amplitudes) {
  lattice.validate();
  if (sites.size() != amplitudes.size())
    throw std::invalid_argument("place_on_lattice: sites/amplitudes size mismatch");
  AtomConfig c;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (i > 0 && sites[i] <= sites[i - 1])
      throw std::invalid_argument("place_on_lattice: sites must be strictly increasing");
    c.positions.push_back(lattice.position_of(sites[i]));
    c.amplitudes.push_back(amplitudes[i]);
  }
  c.validate();
  return c;
}

namespace imaging {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

Intensity continuous_image(const AtomConfig& atoms, const ResponseLsf& lsf) {
  atoms.validate();
  return [atoms, lsf](double x) {
    double acc = 0.0;
    for (std::size_t l = 0; l < atoms.size(); ++l) acc += atoms.amplitudes[l] * lsf(x - atoms.positions[l]);
    return acc;
  };
}

Profile1D sample_to_ccd(const Intensity& intensity, double delta_s_um, double delta_p_um,
                        std::size_t n_px) {
  if (!(delta_s_um > 0.0) || !(delta_p_um > 0.0))
    throw std::invalid_argument("sample_to_ccd: spacings must be positive");
  if (delta_p_um > delta_s_um) throw std::invalid_argument("sample_to_ccd: delta_p exceeds delta_s");
  if (n_px == 0) throw std::invalid_argument("sample_to_ccd: zero pixels");
  const auto& q = stats::gauss_legendre(16);
  const double half = 0.5 * delta_p_um / delta_s_um;  // aperture half width in pixels
  Profile1D p;
  p.values.resize(n_px);
  for (std::size_t i = 0; i < n_px; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < q.nodes.size(); ++k)
      acc += q.weights[k] * intensity(static_cast<double>(i) + half * q.nodes[k]);
    p.values[i] = 0.5 * acc;  // mean over the aperture
  }
  return p;
}

double em_amplify(std::uint64_t electrons, double g, Rng& rng) {
  if (electrons == 0) return 0.0;
  std::gamma_distribution<double> gamma(static_cast<double>(electrons), g);
  return gamma(rng);
}

std::vector<double> mean_fluorescence(const AtomConfig& atoms, const ResponseLsf& optical_lsf,
                                      const SimulationOptions& opt, double delta_s_um,
                                      double delta_p_um) {
  atoms.validate();
  std::vector<double> mean(opt.cols * opt.rows, 0.0);
  if (atoms.size() == 0) return mean;
  // Row weights of the transverse distribution, normalized over the frame.
  std::vector<double> wrow(opt.rows);
  const double yc = 0.5 * static_cast<double>(opt.rows - 1);
  double wsum = 0.0;
  for (std::size_t j = 0; j < opt.rows; ++j) {
    const double dy = (static_cast<double>(j) - yc) / opt.transverse_sigma_rows;
    wrow[j] = std::exp(-0.5 * dy * dy);
    wsum += wrow[j];
  }
  for (double& w : wrow) w /= wsum;

  const auto column = sample_to_ccd(continuous_image(atoms, optical_lsf), delta_s_um, delta_p_um, opt.cols);
  for (std::size_t j = 0; j < opt.rows; ++j)
    for (std::size_t i = 0; i < opt.cols; ++i) mean[j * opt.cols + i] = column.values[i] * wrow[j];
  return mean;
}

namespace {

double prnu_factor(std::uint64_t seed, std::size_t index, double prnu) {
  if (prnu == 0.0) return 1.0;
  auto rng = make_rng(seed, index);
  std::normal_distribution<double> n(0.0, 1.0);
  return std::max(0.0, 1.0 + prnu * n(rng));
}

std::uint64_t poisson(double mean, Rng& rng) {
  if (mean <= 0.0) return 0;
  std::poisson_distribution<std::uint64_t> d(mean);
  return d(rng);
}

}  // namespace

PixelImage simulate_exposure(const AtomConfig& atoms, const ResponseLsf& optical_lsf,
                             const noise::NoiseParams& noise, const LatticeModel& lattice,
                             Rng& rng, const SimulationOptions& opt) {
  noise.validate();
  lattice.validate();
  atoms.validate();
  if (opt.cols == 0 || opt.rows == 0) throw std::invalid_argument("simulate_exposure: empty frame");
  if (!(opt.loss_probability >= 0.0 && opt.loss_probability <= 1.0))
    throw std::invalid_argument("simulate_exposure: loss probability outside [0, 1]");
  const double delta_s = optical_lsf.delta_s();
  if (opt.delta_p_um > delta_s) throw std::invalid_argument("simulate_exposure: delta_p exceeds delta_s");

  AtomConfig effective = atoms;
  if (opt.loss_probability > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& a : effective.amplitudes)
      if (u(rng) < opt.loss_probability) a *= u(rng);  // flux stops at a uniform time
  }
  double intensity_scale = 1.0;
  if (noise.intensity_noise > 0.0) {
    std::normal_distribution<double> n(0.0, 1.0);
    intensity_scale = std::max(0.0, 1.0 + noise.intensity_noise * n(rng));
  }
  const auto mean = mean_fluorescence(effective, optical_lsf, opt, delta_s, opt.delta_p_um);

  PixelImage img(opt.cols, opt.rows, delta_s, opt.delta_p_um, opt.exposure_s);
  auto counts = img.counts();
  std::normal_distribution<double> readout(0.0, noise.sigma_ro);
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double gain_k = prnu_factor(opt.prnu_seed, k, noise.prnu);
    std::uint64_t electrons = poisson(mean[k] * intensity_scale * gain_k, rng);
    electrons += poisson(noise.stray_rate * intensity_scale * gain_k, rng);
    electrons += poisson(noise.cic_rate, rng);
    electrons += poisson(noise.dark_rate, rng);
    // An excess factor of 1 selects a conventional (deterministic) gain register.
    double out = noise.excess_factor > 1.0 ? em_amplify(electrons, noise.g, rng)
                                           : static_cast<double>(electrons) * noise.g;
    if (noise.sigma_ro > 0.0) out += readout(rng);
    counts[k] = out / noise.g;
  }
  return img;
}

PixelImage simulate_exposure(const AtomConfig& atoms, const ResponseLsf& optical_lsf,
                             const noise::NoiseParams& noise, const LatticeModel& lattice,
                             std::uint64_t seed, const SimulationOptions& opt) {
  auto rng = make_rng(seed);
  return simulate_exposure(atoms, optical_lsf, noise, lattice, rng, opt);
}

Profile1D integrate_transverse(const PixelImage& img, std::size_t row_begin, std::size_t row_end) {
  if (row_end <= row_begin) throw std::invalid_argument("integrate_transverse: empty row range");
  if (row_end > img.rows()) throw std::invalid_argument("integrate_transverse: rows outside image");
  Profile1D p;
  p.values.assign(img.cols(), 0.0);
  for (std::size_t j = row_begin; j < row_end; ++j)
    for (std::size_t i = 0; i < img.cols(); ++i) p.values[i] += img.at(i, j);
  p.n_perp = static_cast<int>(row_end - row_begin);
  return p;
}

Profile1D integrate_transverse(const PixelImage& img) { return integrate_transverse(img, 0, img.rows()); }

double estimate_baseline(const Profile1D& profile, std::span<const PixelRange> signal_free) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& [b, e] : signal_free) {
    if (e > profile.size() || b > e) throw std::invalid_argument("estimate_baseline: range outside profile");
    for (std::size_t i = b; i < e; ++i) {
      sum += profile.values[i];
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("estimate_baseline: no signal-free pixels");
  return sum / static_cast<double>(n);
}

Profile1D subtract_background(const Profile1D& profile, std::span<const PixelRange> signal_free,
                              std::span<const PixelRange> rois) {
  profile.validate();
  for (const auto& [fb, fe] : signal_free)
    for (const auto& [rb, re] : rois)
      if (fb < re && rb < fe)
        throw std::invalid_argument("subtract_background: signal-free region overlaps an ROI");
  const double base = estimate_baseline(profile, signal_free);
  Profile1D out = profile;
  for (double& v : out.values) v -= base;
  out.background_subtracted = true;
  return out;
}

}  // namespace imaging
}  // namespace atomloc
