#pragma once

#include <cmath>
#include <span>
#include <string>

#include "groupdecode/types.hpp"

namespace gdec {

enum class Activation { asinh, identity };
enum class DownsampleMode { mean, stride };
enum class Mode { train, eval };

std::string to_string(Activation a);
std::string to_string(DownsampleMode d);
Activation activation_from_string(const std::string& s);
DownsampleMode downsample_from_string(const std::string& s);

/// Stacks y (C x T) over E constant rows holding e; E = 0 returns y.
template <class Real>
Mat<Real> concat_embedding(const Mat<Real>& y, const Vec<Real>& e);

/// Causal dilated convolution preserving length T.
/// weight is Cout x (k * Cin), tap-major: columns [j*Cin, (j+1)*Cin) hold tap j.
/// y[o,t] = bias[o] + sum_{i,j} w[o,i,j] * x[i, t - d*(k-1) + d*j], with x zero for negative time.
template <class Real>
Mat<Real> dilated_conv1d_forward(const Mat<Real>& x, const Mat<Real>& weight, const Vec<Real>& bias, int kernel_size,
                                 int dilation);

/// Accumulates weight and bias gradients; writes the input gradient when dx is non-null.
template <class Real>
void dilated_conv1d_backward(const Mat<Real>& x, const Mat<Real>& dy, const Mat<Real>& weight, int kernel_size,
                             int dilation, Mat<Real>& dweight, Vec<Real>& dbias, Mat<Real>* dx);

template <class Real>
inline Real activate(Real x, Activation a) {
  return a == Activation::asinh ? std::asinh(x) : x;
}

/// Derivative of the activation evaluated at the pre-activation x.
template <class Real>
inline Real activate_derivative(Real x, Activation a) {
  return a == Activation::asinh ? Real(1) / std::sqrt(Real(1) + x * x) : Real(1);
}

template <class Real>
Mat<Real> activate(const Mat<Real>& x, Activation a);

/// Inverted dropout mask: 0 with probability p, 1/(1-p) otherwise. Throws for p outside [0, 1).
template <class Real>
Mat<Real> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng);

/// Identity in eval mode or when p == 0.
template <class Real>
Mat<Real> dropout(const Mat<Real>& x, double p, Rng& rng, Mode mode);

/// Reduces H x T to H x (T / factor) by window means (or the last sample of each window).
template <class Real>
Mat<Real> temporal_downsample(const Mat<Real>& x, int factor, DownsampleMode mode = DownsampleMode::mean);

template <class Real>
Mat<Real> temporal_downsample_backward(const Mat<Real>& dy, int factor, DownsampleMode mode, Eigen::Index length);

template <class Real>
Mat<Real> softmax(const Mat<Real>& logits);

template <class Real>
struct LossResult {
  Real loss = 0;
  /// d loss / d logits, batch x classes.
  Mat<Real> dlogits;
};

/// Mean cross-entropy of row-wise softmax against integer labels.
template <class Real>
LossResult<Real> cross_entropy(const Mat<Real>& logits, std::span<const int> labels);

}  // namespace gdec
