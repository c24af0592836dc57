#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace seld::fft {

using Complex = std::complex<double>;

// Real-to-complex forward transform of `x` zero-padded (or truncated) to n
// points. Returns the n/2 + 1 non-negative frequency bins, unnormalized.
std::vector<Complex> rfft(std::span<const double> x, std::size_t n);

// Inverse of rfft: takes n/2 + 1 bins and returns n real samples, scaled by 1/n.
std::vector<double> irfft(std::span<const Complex> spectrum, std::size_t n);

}  // namespace seld::fft
