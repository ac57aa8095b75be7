#include "atomloc/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cstring>
#include <mutex>
#include <stdexcept>

namespace atomloc::fft {
namespace {

// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

std::vector<cplx> run(std::span<const cplx> x, int sign) {
  const std::size_t n = x.size();
  if (n == 0) return {};
  auto* in = fftw_alloc_complex(n);
  auto* out = fftw_alloc_complex(n);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_1d(static_cast<int>(n), in, out, sign, FFTW_ESTIMATE);
  }
  std::memcpy(in, x.data(), n * sizeof(cplx));
  fftw_execute(plan);
  std::vector<cplx> result(n);
  std::memcpy(result.data(), out, n * sizeof(cplx));
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return result;
}

}  // namespace

std::vector<cplx> forward(std::span<const cplx> x) { return run(x, FFTW_FORWARD); }

std::vector<cplx> forward(std::span<const double> x) {
  std::vector<cplx> c(x.begin(), x.end());
  return run(c, FFTW_FORWARD);
}

std::vector<cplx> inverse(std::span<const cplx> X) {
  auto out = run(X, FFTW_BACKWARD);
  const double scale = 1.0 / static_cast<double>(X.size());
  for (auto& v : out) v *= scale;
  return out;
}

struct Plan1d::Impl {
  fftw_complex* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;
};

Plan1d::Plan1d(std::size_t n, bool forward_dir) : n_(n), impl_(std::make_unique<Impl>()) {
  if (n == 0) throw std::invalid_argument("Plan1d: zero length");
  impl_->in = fftw_alloc_complex(n);
  impl_->out = fftw_alloc_complex(n);
  std::lock_guard lock(planner_mutex());
  impl_->plan = fftw_plan_dft_1d(static_cast<int>(n), impl_->in, impl_->out,
                                 forward_dir ? FFTW_FORWARD : FFTW_BACKWARD, FFTW_ESTIMATE);
}

Plan1d::~Plan1d() {
  if (!impl_) return;
  {
    std::lock_guard lock(planner_mutex());
    if (impl_->plan) fftw_destroy_plan(impl_->plan);
  }
  fftw_free(impl_->in);
  fftw_free(impl_->out);
}

Plan1d::Plan1d(Plan1d&&) noexcept = default;
Plan1d& Plan1d::operator=(Plan1d&&) noexcept = default;

std::span<cplx> Plan1d::input() { return {reinterpret_cast<cplx*>(impl_->in), n_}; }

std::span<const cplx> Plan1d::output() const {
  return {reinterpret_cast<const cplx*>(impl_->out), n_};
}

void Plan1d::execute() { fftw_execute(impl_->plan); }

std::vector<cplx> forward_2d(std::span<const cplx> x, std::size_t ny, std::size_t nx) {
  if (x.size() != ny * nx) throw std::invalid_argument("forward_2d: size mismatch");
  auto* buf = fftw_alloc_complex(ny * nx);
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_dft_2d(static_cast<int>(ny), static_cast<int>(nx), buf, buf, FFTW_FORWARD,
                            FFTW_ESTIMATE);
  }
  std::memcpy(buf, x.data(), x.size() * sizeof(cplx));
  fftw_execute(plan);
  std::vector<cplx> out(x.size());
  std::memcpy(out.data(), buf, x.size() * sizeof(cplx));
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(buf);
  return out;
}

}  // namespace atomloc::fft
