#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace atomloc::fft {

using cplx = std::complex<double>;

/// Unnormalized forward DFT: X[k] = sum_n x[n] exp(-2 pi i k n / N).
std::vector<cplx> forward(std::span<const cplx> x);
std::vector<cplx> forward(std::span<const double> x);

/// Inverse DFT including the 1/N factor, so inverse(forward(x)) == x.
std::vector<cplx> inverse(std::span<const cplx> X);

/// Signed frequency index of bin k for a length-n transform (k for k <= n/2, k - n otherwise).
inline long signed_index(std::size_t k, std::size_t n) {
  return (2 * k <= n) ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(n);
}

/**
 * Reusable 1D complex transform of fixed length. Owns its FFTW plan and buffers,
 * so one instance must not be shared between threads.
 */
class Plan1d {
 public:
  Plan1d(std::size_t n, bool forward_dir);
  ~Plan1d();
  Plan1d(const Plan1d&) = delete;
  Plan1d& operator=(const Plan1d&) = delete;
  Plan1d(Plan1d&&) noexcept;
  Plan1d& operator=(Plan1d&&) noexcept;

  std::size_t size() const { return n_; }
  std::span<cplx> input();
  std::span<const cplx> output() const;
  void execute();

 private:
  struct Impl;
  std::size_t n_ = 0;
  std::unique_ptr<Impl> impl_;
};

/// 2D forward transform of a row-major ny x nx array.
std::vector<cplx> forward_2d(std::span<const cplx> x, std::size_t ny, std::size_t nx);

}  // namespace atomloc::fft
