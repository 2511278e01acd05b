#include "groupdecode/layers.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace gdec {

std::string to_string(Activation a) { return a == Activation::asinh ? "asinh" : "identity"; }
std::string to_string(DownsampleMode d) { return d == DownsampleMode::mean ? "mean" : "stride"; }

Activation activation_from_string(const std::string& s) {
  if (s == "asinh") return Activation::asinh;
  if (s == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation '" + s + "' (expected asinh|identity)");
}

DownsampleMode downsample_from_string(const std::string& s) {
  if (s == "mean") return DownsampleMode::mean;
  if (s == "stride") return DownsampleMode::stride;
  throw std::invalid_argument("unknown downsampling '" + s + "' (expected mean|stride)");
}

template <class Real>
Mat<Real> concat_embedding(const Mat<Real>& y, const Vec<Real>& e) {
  if (e.size() == 0) return y;
  Mat<Real> x(y.rows() + e.size(), y.cols());
  x.topRows(y.rows()) = y;
  for (Eigen::Index j = 0; j < e.size(); ++j) x.row(y.rows() + j).setConstant(e(j));
  return x;
}

template <class Real>
Mat<Real> dilated_conv1d_forward(const Mat<Real>& x, const Mat<Real>& weight, const Vec<Real>& bias, int kernel_size,
                                 int dilation) {
  const Eigen::Index cin = x.rows();
  const Eigen::Index T = x.cols();
  if (weight.cols() != cin * kernel_size || weight.rows() != bias.size())
    throw std::invalid_argument("conv weight shape does not match input");
  Mat<Real> y(weight.rows(), T);
  y.colwise() = bias;
  for (int j = 0; j < kernel_size; ++j) {
    const Eigen::Index shift = static_cast<Eigen::Index>(dilation) * (kernel_size - 1 - j);
    if (shift >= T) continue;
    y.rightCols(T - shift).noalias() += weight.middleCols(j * cin, cin) * x.leftCols(T - shift);
  }
  return y;
}

template <class Real>
void dilated_conv1d_backward(const Mat<Real>& x, const Mat<Real>& dy, const Mat<Real>& weight, int kernel_size,
                             int dilation, Mat<Real>& dweight, Vec<Real>& dbias, Mat<Real>* dx) {
  const Eigen::Index cin = x.rows();
  const Eigen::Index T = x.cols();
  dbias += dy.rowwise().sum();
  if (dx != nullptr) dx->setZero(cin, T);
  for (int j = 0; j < kernel_size; ++j) {
    const Eigen::Index shift = static_cast<Eigen::Index>(dilation) * (kernel_size - 1 - j);
    if (shift >= T) continue;
    dweight.middleCols(j * cin, cin).noalias() += dy.rightCols(T - shift) * x.leftCols(T - shift).transpose();
    if (dx != nullptr)
      dx->leftCols(T - shift).noalias() += weight.middleCols(j * cin, cin).transpose() * dy.rightCols(T - shift);
  }
}

template <class Real>
Mat<Real> activate(const Mat<Real>& x, Activation a) {
  if (a == Activation::identity) return x;
  // asinh(|x|) = log1p(|x| + x^2 / (1 + sqrt(1 + x^2))), vectorized and accurate near zero
  const auto m = x.array().abs();
  const auto sq = m.square();
  Mat<Real> y = (m + sq / (Real(1) + (sq + Real(1)).sqrt())).log1p();
  y.array() *= x.array().sign();
  return y;
}
template <class Real>
Mat<Real> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  Mat<Real> mask(rows, cols);
  const Real keep = static_cast<Real>(1.0 / (1.0 - p));
  // each 64-bit draw supplies two 32-bit uniforms; drop when below p * 2^32
  const auto threshold = static_cast<std::uint64_t>(std::ldexp(p, 32));
  const Eigen::Index n = mask.size();
  Real* out = mask.data();
  for (Eigen::Index i = 0; i < n; i += 2) {
    const std::uint64_t r = rng();
    out[i] = (r & 0xffffffffu) < threshold ? Real(0) : keep;
    if (i + 1 < n) out[i + 1] = (r >> 32) < threshold ? Real(0) : keep;
  }
  return mask;
}
template <class Real>
Mat<Real> dropout(const Mat<Real>& x, double p, Rng& rng, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return x;
  return x.cwiseProduct(dropout_mask<Real>(x.rows(), x.cols(), p, rng));
}

template <class Real>
Mat<Real> temporal_downsample(const Mat<Real>& x, int factor, DownsampleMode mode) {
  if (factor < 1 || x.cols() % factor != 0)
    throw std::invalid_argument("downsampling factor " + std::to_string(factor) + " does not divide length " +
                                std::to_string(x.cols()));
  const Eigen::Index out_len = x.cols() / factor;
  Mat<Real> y(x.rows(), out_len);
  for (Eigen::Index i = 0; i < out_len; ++i) {
    if (mode == DownsampleMode::mean)
      y.col(i) = x.middleCols(i * factor, factor).rowwise().mean();
    else
      y.col(i) = x.col(i * factor + factor - 1);
  }
  return y;
}

template <class Real>
Mat<Real> temporal_downsample_backward(const Mat<Real>& dy, int factor, DownsampleMode mode, Eigen::Index length) {
  Mat<Real> dx = Mat<Real>::Zero(dy.rows(), length);
  for (Eigen::Index i = 0; i < dy.cols(); ++i) {
    if (mode == DownsampleMode::mean)
      dx.middleCols(i * factor, factor).colwise() = dy.col(i) / static_cast<Real>(factor);
    else
      dx.col(i * factor + factor - 1) = dy.col(i);
  }
  return dx;
}

template <class Real>
Mat<Real> softmax(const Mat<Real>& logits) {
  Mat<Real> p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <class Real>
LossResult<Real> cross_entropy(const Mat<Real>& logits, std::span<const int> labels) {
  const Eigen::Index B = logits.rows();
  const Eigen::Index K = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != B) throw std::invalid_argument("label count does not match batch");
  if (B == 0) throw std::invalid_argument("empty batch");
  LossResult<Real> r;
  r.dlogits = softmax(logits);
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= K) throw std::invalid_argument("label " + std::to_string(y) + " outside [0, " + std::to_string(K) + ")");
    const Real max = logits.row(b).maxCoeff();
    const Real lse = max + std::log((logits.row(b).array() - max).exp().sum());
    total += static_cast<double>(lse - logits(b, y));
    r.dlogits(b, y) -= Real(1);
  }
  r.dlogits /= static_cast<Real>(B);
  r.loss = static_cast<Real>(total / static_cast<double>(B));
  return r;
}

#define GDEC_INSTANTIATE(Real)                                                                                       \
  template Mat<Real> concat_embedding(const Mat<Real>&, const Vec<Real>&);                                           \
  template Mat<Real> dilated_conv1d_forward(const Mat<Real>&, const Mat<Real>&, const Vec<Real>&, int, int);        \
  template void dilated_conv1d_backward(const Mat<Real>&, const Mat<Real>&, const Mat<Real>&, int, int, Mat<Real>&, \
                                        Vec<Real>&, Mat<Real>*);                                                     \
  template Mat<Real> activate(const Mat<Real>&, Activation);                                                         \
  template Mat<Real> dropout_mask<Real>(Eigen::Index, Eigen::Index, double, Rng&);                                   \
  template Mat<Real> dropout(const Mat<Real>&, double, Rng&, Mode);                                                  \
  template Mat<Real> temporal_downsample(const Mat<Real>&, int, DownsampleMode);                                     \
  template Mat<Real> temporal_downsample_backward(const Mat<Real>&, int, DownsampleMode, Eigen::Index);               \
  template Mat<Real> softmax(const Mat<Real>&);                                                                      \
  template LossResult<Real> cross_entropy(const Mat<Real>&, std::span<const int>);

GDEC_INSTANTIATE(float)
GDEC_INSTANTIATE(double)

#undef GDEC_INSTANTIATE

}  // namespace gdec
