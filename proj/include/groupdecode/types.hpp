#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace gdec {

/// Row-major dense matrix; for trials and activations rows are channels, columns are time.
template <class Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Real>
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

/// One epoched trial, channels x time, stored at 32-bit precision.
using Trial = Mat<float>;

using Rng = std::mt19937_64;

/// Derives an independent generator from a base seed and a tuple of stream indices.
template <class... Ix>
Rng make_rng(std::uint64_t seed, Ix... stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)...};
  return Rng(seq);
}

/// A 64-bit seed for a sub-run, drawn from make_rng(seed, stream...).
template <class... Ix>
std::uint64_t derive_seed(std::uint64_t seed, Ix... stream) {
  Rng rng = make_rng(seed, stream...);
  return rng();
}

}  // namespace gdec
