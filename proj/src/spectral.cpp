#include "atomloc/fft.hpp"
#include "atomloc/localization.hpp"
#include "atomloc/lsf.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace atomloc::loc {

using cplx = std::complex<double>;

WienerResult wiener_deconvolve(std::span<const double> roi, const ResponseLsf& lsf,
                               const noise::NoiseParams& noise, int n_perp, const WienerOptions& opt) {
  if (roi.empty()) throw std::invalid_argument("wiener_deconvolve: empty ROI");
  if (opt.iterations < 1) throw std::invalid_argument("wiener_deconvolve: iterations must be >= 1");
  const std::size_t n_data = roi.size();
  const std::size_t n = std::max(n_data, opt.min_length);
  const double band = opt.band > 0.0 ? opt.band : lsf::default_cutoff();
  std::vector<double> padded(roi.begin(), roi.end());
  padded.resize(n, 0.0);
  const auto spec = fft::forward(padded);
  double photons = 0.0;
  for (double v : roi) photons += v;
  const double sigma2 = n_perp * static_cast<double>(n_data) * noise.sigma_b * noise.sigma_b +
                        noise.c1 * noise.c1 * std::max(photons, 0.0);

  WienerResult w;
  w.n = n;
  w.n_data = n_data;
  const long K = std::min(static_cast<long>(std::floor(band * static_cast<double>(n))),
                          static_cast<long>((n - 1) / 2));
  std::vector<cplx> S, O;
  for (long k = -K; k <= K; ++k) {
    w.k.push_back(k);
    S.push_back(spec[static_cast<std::size_t>(k >= 0 ? k : static_cast<long>(n) + k)]);
    O.push_back(lsf.otf(static_cast<double>(k) / static_cast<double>(n)));
  }
  const std::size_t nk = w.k.size();
  w.f.assign(nk, 0.0);
  w.filter.assign(nk, 0.0);
  for (std::size_t j = 0; j < nk; ++j)
    if (std::abs(O[j]) > 1e-9) w.f[j] = S[j] / O[j];
  for (int it = 0; it < opt.iterations; ++it) {
    std::vector<cplx> next(nk, 0.0);
    for (std::size_t j = 0; j < nk; ++j) {
      const double o2 = std::norm(O[j]);
      const double snr = sigma2 > 0.0 ? std::norm(w.f[j]) / sigma2 : std::numeric_limits<double>::infinity();
      if (!(snr > 0.0) || !(o2 > 0.0)) {
        w.filter[j] = 0.0;
        continue;
      }
      const double inv = std::isinf(snr) ? 0.0 : 1.0 / snr;
      w.filter[j] = o2 / (o2 + inv);
      next[j] = S[j] * std::conj(O[j]) / (o2 + inv);
    }
    w.f = std::move(next);
  }
  return w;
}

int music_max_sources(const WienerResult& w) {
  const auto len = static_cast<int>(w.f.size());
  return std::max(0, (len + 1) / 4 - 1);
}

MusicResult music_estimate(const WienerResult& w, int m, std::optional<std::pair<double, double>> scan) {
  if (m < 1) throw std::invalid_argument("music_estimate: m must be >= 1");
  const int max_m = music_max_sources(w);
  if (m > max_m)
    throw std::invalid_argument("music_estimate: " + std::to_string(m) +
                                " sources exceed the usable band; maximum resolvable count is " +
                                std::to_string(max_m));
  const int L = 2 * m + 2;
  const auto len = static_cast<int>(w.f.size());
  const int snaps = len - L + 1;
  Eigen::MatrixXcd R = Eigen::MatrixXcd::Zero(L, L);
  Eigen::VectorXcd y(L);
  for (int t = 0; t < snaps; ++t) {
    for (int j = 0; j < L; ++j) y(j) = w.f[static_cast<std::size_t>(t + j)];
    R += y * y.adjoint();
  }
  R /= static_cast<double>(snaps);
  // forward-backward average
  Eigen::MatrixXcd Rb(L, L);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) Rb(i, j) = std::conj(R(L - 1 - i, L - 1 - j));
  R = 0.5 * (R + Rb);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(R);
  const Eigen::MatrixXcd En = es.eigenvectors().leftCols(L - m);

  MusicResult out;
  out.order = L;
  const double n = static_cast<double>(w.n);
  const double step = 0.05;
  const double extent = static_cast<double>(w.n_data > 0 ? w.n_data : w.n) - 1.0;
  const auto ng = static_cast<std::size_t>(std::ceil(extent / step)) + 1;
  Eigen::VectorXcd a(L);
  for (std::size_t g = 0; g < ng; ++g) {
    const double xi = static_cast<double>(g) * step;
    for (int j = 0; j < L; ++j) a(j) = std::polar(1.0, -2.0 * std::numbers::pi * j * xi / n);
    const double proj = (En.adjoint() * a).squaredNorm();
    out.grid.push_back(xi);
    out.pseudospectrum.push_back(1.0 / std::max(proj, 1e-300));
  }
  const auto& P = out.pseudospectrum;
  std::vector<std::size_t> peaks;
  const double lo = scan ? scan->first : -1.0;
  const double hi = scan ? scan->second : extent + 1.0;
  for (std::size_t g = 1; g + 1 < ng; ++g)
    if (P[g] > P[g - 1] && P[g] >= P[g + 1] && out.grid[g] >= lo && out.grid[g] <= hi) peaks.push_back(g);
  std::sort(peaks.begin(), peaks.end(), [&](std::size_t a1, std::size_t b1) { return P[a1] > P[b1]; });
  for (std::size_t k = 0; k < peaks.size() && static_cast<int>(k) < m; ++k)
    out.positions.push_back(out.grid[peaks[k]]);
  if (out.positions.empty()) out.positions.push_back(scan ? 0.5 * (lo + hi) : 0.5 * extent);
  // Too few maxima: split the strongest estimate symmetrically.
  while (static_cast<int>(out.positions.size()) < m) {
    const double c = out.positions.front();
    out.positions.front() = c - 0.5;
    out.positions.push_back(c + 0.5);
    std::rotate(out.positions.begin(), out.positions.end() - 1, out.positions.end());
  }
  std::sort(out.positions.begin(), out.positions.end());
  return out;
}

}  // namespace atomloc::loc
