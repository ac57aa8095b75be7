#include "atomloc/localization.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace atomloc::loc {

double PhotonHistogramModel::component(int m, double x) const {
  if (m == 0) return (x >= lo && x <= hi) ? background_density : 0.0;
  const double w = peak_widths[static_cast<std::size_t>(m - 1)];
  const double z = (x - m * peak_spacing) / w;
  return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * std::numbers::pi) * w);
}

double PhotonHistogramModel::posterior(int m, double x) const {
  double total = 0.0, mine = 0.0;
  for (int j = 0; j <= max_atoms(); ++j) {
    const double v = abundances[static_cast<std::size_t>(j)] * component(j, x);
    total += v;
    if (j == m) mine = v;
  }
  return total > 0.0 ? mine / total : 0.0;
}

namespace {

double first_peak(std::span<const double> x, double lo, double hi) {
  const int nb = 200;
  const double bw = (hi - lo) / nb;
  std::vector<double> h(nb, 0.0);
  for (double v : x) h[static_cast<std::size_t>(std::clamp(static_cast<int>((v - lo) / bw), 0, nb - 1))] += 1.0;
  std::vector<double> sm(nb, 0.0);
  for (int i = 0; i < nb; ++i)
    for (int d = -3; d <= 3; ++d)
      if (i + d >= 0 && i + d < nb) sm[i] += h[i + d] * std::exp(-0.5 * d * d / 2.25);
  const double top = *std::max_element(sm.begin(), sm.end());
  for (int i = 1; i + 1 < nb; ++i) {
    const double c = lo + (i + 0.5) * bw;
    if (c <= 0.0) continue;
    if (sm[i] >= sm[i - 1] && sm[i] >= sm[i + 1] && sm[i] > 0.1 * top) return c;
  }
  return lo + (std::max_element(sm.begin(), sm.end()) - sm.begin() + 0.5) * bw;
}

}  // namespace

PhotonHistogramModel fit_photon_histogram(std::span<const double> totals, int max_atoms,
                                          double spacing_hint) {
  if (totals.size() < 100) throw std::invalid_argument("fit_photon_histogram: need at least 100 totals");
  if (max_atoms < 1) throw std::invalid_argument("fit_photon_histogram: max_atoms must be >= 1");
  PhotonHistogramModel m;
  const auto [mn, mx] = std::minmax_element(totals.begin(), totals.end());
  m.lo = std::min(*mn, 0.0);
  m.hi = *mx;
  if (!(m.hi > m.lo)) throw std::invalid_argument("fit_photon_histogram: degenerate totals");
  m.background_density = 1.0 / (m.hi - m.lo);
  m.peak_spacing = spacing_hint > 0.0 ? spacing_hint : first_peak(totals, m.lo, m.hi);
  m.w1 = 0.1 * m.peak_spacing;
  const auto M = static_cast<std::size_t>(max_atoms);
  m.peak_widths.assign(M, 0.0);
  m.abundances.assign(M + 1, 1.0 / static_cast<double>(M + 1));

  const std::size_t n = totals.size();
  std::vector<double> resp((M + 1) * n);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < 1000; ++it) {
    for (std::size_t k = 0; k < M; ++k) m.peak_widths[k] = m.w1 * std::sqrt(static_cast<double>(k + 1));
    // E step
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double tot = 0.0;
      for (std::size_t j = 0; j <= M; ++j) {
        const double v = m.abundances[j] * m.component(static_cast<int>(j), totals[i]);
        resp[j * n + i] = v;
        tot += v;
      }
      tot = std::max(tot, 1e-300);
      for (std::size_t j = 0; j <= M; ++j) resp[j * n + i] /= tot;
      ll += std::log(tot);
    }
    m.log_likelihood = ll;
    m.iterations = it + 1;
    if (std::abs(ll - prev_ll) < 1e-9 * std::abs(ll)) {
      m.converged = true;
      break;
    }
    prev_ll = ll;
    // M step
    double sx = 0.0, sm = 0.0, rsum = 0.0;
    for (std::size_t j = 0; j <= M; ++j) {
      double r = 0.0;
      for (std::size_t i = 0; i < n; ++i) r += resp[j * n + i];
      m.abundances[j] = r / static_cast<double>(n);
      if (j == 0) continue;
      for (std::size_t i = 0; i < n; ++i) {
        sx += resp[j * n + i] * totals[i];
        sm += resp[j * n + i] * static_cast<double>(j);
      }
      rsum += r;
    }
    if (!(sm > 0.0)) break;
    m.peak_spacing = sx / sm;
    double sw = 0.0;
    for (std::size_t j = 1; j <= M; ++j)
      for (std::size_t i = 0; i < n; ++i) {
        const double d = totals[i] - static_cast<double>(j) * m.peak_spacing;
        sw += resp[j * n + i] * d * d / static_cast<double>(j);
      }
    m.w1 = std::sqrt(std::max(sw / rsum, 1e-12));
  }
  for (std::size_t k = 0; k < M; ++k) m.peak_widths[k] = m.w1 * std::sqrt(static_cast<double>(k + 1));
  return m;
}

std::vector<AcceptanceRegion> acceptance_regions(const PhotonHistogramModel& model, double min_confidence) {
  const int M = model.max_atoms();
  const std::size_t ng = 20000;
  const double lo = model.lo, hi = model.hi + 3.0 * model.peak_widths.back();
  const double dx = (hi - lo) / static_cast<double>(ng - 1);
  std::vector<double> xs(ng);
  std::vector<std::vector<double>> w(static_cast<std::size_t>(M + 1), std::vector<double>(ng));
  std::vector<double> mix(ng, 0.0);
  for (std::size_t g = 0; g < ng; ++g) {
    xs[g] = lo + dx * static_cast<double>(g);
    for (int j = 0; j <= M; ++j) {
      w[static_cast<std::size_t>(j)][g] = model.abundances[static_cast<std::size_t>(j)] * model.component(j, xs[g]);
      mix[g] += w[static_cast<std::size_t>(j)][g];
    }
  }
  std::vector<AcceptanceRegion> out;
  for (int m = 1; m <= M; ++m) {
    const auto& wm = w[static_cast<std::size_t>(m)];
    std::vector<std::size_t> zone;
    for (std::size_t g = 0; g < ng; ++g) {
      bool best = mix[g] > 0.0;
      for (int j = 0; j <= M && best; ++j)
        if (j != m && w[static_cast<std::size_t>(j)][g] > wm[g]) best = false;
      if (best) zone.push_back(g);
    }
    if (zone.empty()) continue;
    std::sort(zone.begin(), zone.end(), [&](std::size_t a, std::size_t b) {
      return wm[a] / mix[a] > wm[b] / mix[b];
    });
    double num = 0.0, den = 0.0, pw = 0.0;
    std::size_t keep = 0;
    double keep_pw = 0.0, keep_conf = 0.0;
    for (std::size_t k = 0; k < zone.size(); ++k) {
      num += wm[zone[k]];
      den += mix[zone[k]];
      pw += model.component(m, xs[zone[k]]) * dx;
      if (num / den >= min_confidence) {
        keep = k + 1;
        keep_pw = pw;
        keep_conf = num / den;
      }
    }
    if (keep == 0) continue;
    AcceptanceRegion r;
    r.m = m;
    r.lo = xs[*std::min_element(zone.begin(), zone.begin() + static_cast<long>(keep))] - 0.5 * dx;
    r.hi = xs[*std::max_element(zone.begin(), zone.begin() + static_cast<long>(keep))] + 0.5 * dx;
    r.power = keep_pw;
    r.confidence = keep_conf;
    out.push_back(r);
  }
  return out;
}

CountResult count_atoms(const Roi& roi, const PhotonHistogramModel& model, double min_confidence) {
  CountResult c;
  const double x = roi.integrated_e;
  for (const auto& r : acceptance_regions(model, min_confidence)) {
    if (x >= r.lo && x < r.hi) {
      c.m = r.m;
      c.confidence = model.posterior(r.m, x);
      c.accepted = true;
      return c;
    }
  }
  int best = 0;
  for (int m = 1; m <= model.max_atoms(); ++m)
    if (model.posterior(m, x) > model.posterior(best, x)) best = m;
  if (x < 0.5 * model.peak_spacing) best = 0;
  c.m = best;
  c.confidence = model.posterior(best, x);
  c.accepted = false;
  return c;
}

}  // namespace atomloc::loc
