#include "seld/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>

namespace seld::fft {
namespace {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
template <class T>
using FftwBuffer = std::unique_ptr<T[], FftwFree>;

template <class T>
FftwBuffer<T> allocate(std::size_t count) {
  auto* p = static_cast<T*>(fftw_malloc(sizeof(T) * std::max<std::size_t>(count, 1)));
  if (p == nullptr) throw std::bad_alloc();
  return FftwBuffer<T>(p);
}

// FFTW's planner is not thread-safe; execution with new-array functions is.
// Plans are created once per size and kept for the process lifetime.
class PlanCache {
 public:
  fftw_plan forward(std::size_t n) { return get(n, true); }
  fftw_plan inverse(std::size_t n) { return get(n, false); }

 private:
  fftw_plan get(std::size_t n, bool forward) {
    std::lock_guard lock(mutex_);
    auto& slot = (forward ? forward_ : inverse_)[n];
    if (slot == nullptr) {
      auto real = allocate<double>(n);
      auto spec = allocate<fftw_complex>(n / 2 + 1);
      const int size = static_cast<int>(n);
      slot = forward ? fftw_plan_dft_r2c_1d(size, real.get(), spec.get(), FFTW_ESTIMATE)
                     : fftw_plan_dft_c2r_1d(size, spec.get(), real.get(), FFTW_ESTIMATE);
    }
    return slot;
  }

  std::mutex mutex_;
  std::map<std::size_t, fftw_plan> forward_;
  std::map<std::size_t, fftw_plan> inverse_;
};

PlanCache& plans() {
  static PlanCache cache;
  return cache;
}

}  // namespace

std::vector<Complex> rfft(std::span<const double> x, std::size_t n) {
  if (n == 0) throw std::invalid_argument("rfft: zero length");
  auto in = allocate<double>(n);
  auto out = allocate<fftw_complex>(n / 2 + 1);
  const std::size_t copy = std::min(n, x.size());
  std::copy_n(x.begin(), copy, in.get());
  std::fill(in.get() + copy, in.get() + n, 0.0);
  fftw_execute_dft_r2c(plans().forward(n), in.get(), out.get());
  std::vector<Complex> result(n / 2 + 1);
  for (std::size_t k = 0; k < result.size(); ++k) result[k] = {out[k][0], out[k][1]};
  return result;
}

std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n) {
  if (n == 0) throw std::invalid_argument("irfft: zero length");
  if (spectrum.size() != n / 2 + 1) throw std::invalid_argument("irfft: bin count does not match n");
  auto in = allocate<fftw_complex>(n / 2 + 1);
  auto out = allocate<double>(n);
  for (std::size_t k = 0; k < spectrum.size(); ++k) {
    in[k][0] = spectrum[k].real();
    in[k][1] = spectrum[k].imag();
  }
  // c2r destroys its input; the buffer is scratch anyway.
  fftw_execute_dft_c2r(plans().inverse(n), in.get(), out.get());
  std::vector<double> result(out.get(), out.get() + n);
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& v : result) v *= scale;
  return result;
}

}  // namespace seld::fft
