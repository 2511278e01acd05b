#pragma once

#include <complex>
#include <span>
#include <vector>

namespace gdec::fft {

using Complex = std::complex<double>;

/// Full-length forward DFT of a complex sequence (unnormalized).
std::vector<Complex> forward(std::span<const Complex> x);

/// Inverse DFT normalized by 1/n, so inverse(forward(x)) == x.
std::vector<Complex> inverse(std::span<const Complex> X);

/// Non-negative frequency half of the DFT of a real signal: n/2 + 1 bins.
std::vector<Complex> rfft(std::span<const double> x);

/// Real signal of length n from its non-negative frequency half, normalized by 1/n.
std::vector<double> irfft(std::span<const Complex> X, std::size_t n);

/// Frequency in Hz of bin k for an n-point transform.
inline double bin_frequency(std::size_t k, std::size_t n, double sfreq) {
  return static_cast<double>(k) * sfreq / static_cast<double>(n);
}

}  // namespace gdec::fft
