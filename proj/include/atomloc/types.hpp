#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace atomloc {

/**
 * Detector frame in photoelectron units (raw output divided by the EM gain).
 * Column index runs along the lattice axis; pixel (col, row) is stored at row * cols + col.
 */
class PixelImage {
 public:
  PixelImage(std::size_t cols, std::size_t rows, double delta_s_um, double delta_p_um,
             double exposure_s);
  PixelImage(std::size_t cols, std::size_t rows, std::vector<double> counts, double delta_s_um,
             double delta_p_um, double exposure_s);

  std::size_t cols() const { return cols_; }
  std::size_t rows() const { return rows_; }
  double delta_s() const { return delta_s_; }
  double delta_p() const { return delta_p_; }
  double exposure() const { return exposure_; }

  double& at(std::size_t col, std::size_t row) { return counts_[row * cols_ + col]; }
  double at(std::size_t col, std::size_t row) const { return counts_[row * cols_ + col]; }
  std::span<const double> counts() const { return counts_; }
  std::span<double> counts() { return counts_; }

 private:
  void validate() const;

  std::size_t cols_;
  std::size_t rows_;
  std::vector<double> counts_;
  double delta_s_;
  double delta_p_;
  double exposure_;
};

/// Transverse-integrated 1D signal.
struct Profile1D {
  std::vector<double> values;
  std::size_t origin_px = 0;
  bool background_subtracted = false;
  int n_perp = 1;

  std::size_t size() const { return values.size(); }
  void validate() const;
};

/// Emitter positions (pixels, strictly increasing) and expected photoelectron totals.
struct AtomConfig {
  std::vector<double> positions;
  std::vector<double> amplitudes;
  bool all_distinct_sites = true;

  std::size_t size() const { return positions.size(); }
  void validate() const;
};

struct LatticeModel {
  double a_px = 1.47;
  double delta_L = 0.0;
  double a_nm = 433.0;

  double position_of(long site) const { return a_px * static_cast<double>(site) + delta_L; }
  void validate() const;
};

/// Places emitters on integer lattice sites; sites must be strictly increasing.
AtomConfig place_on_lattice(std::span<const long> sites, const LatticeModel& lattice,
                            std::span<const double> amplitudes);

}  // namespace atomloc
