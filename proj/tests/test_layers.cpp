#include <cmath>
#include <vector>

#include "doctest.h"

#include "groupdecode/layers.hpp"
#include "test_util.hpp"

using namespace gdec;
using gdec::testing::random_mat;

namespace {

// direct transcription of y[o,t] = b[o] + sum_{i,j} w[o,i,j] x[i, t - d(k-1) + dj]
Mat<double> conv_oracle(const Mat<double>& x, const std::vector<Mat<double>>& taps, const Vec<double>& b, int d) {
  const int k = static_cast<int>(taps.size());
  Mat<double> y(taps[0].rows(), x.cols());
  for (Eigen::Index o = 0; o < y.rows(); ++o)
    for (Eigen::Index t = 0; t < y.cols(); ++t) {
      double acc = b[o];
      for (int j = 0; j < k; ++j) {
        const Eigen::Index src = t - d * (k - 1) + d * j;
        if (src < 0) continue;
        for (Eigen::Index i = 0; i < x.rows(); ++i) acc += taps[static_cast<std::size_t>(j)](o, i) * x(i, src);
      }
      y(o, t) = acc;
    }
  return y;
}

Mat<double> pack_taps(const std::vector<Mat<double>>& taps) {
  const auto cin = taps[0].cols();
  Mat<double> w(taps[0].rows(), cin * static_cast<Eigen::Index>(taps.size()));
  for (std::size_t j = 0; j < taps.size(); ++j) w.middleCols(static_cast<Eigen::Index>(j) * cin, cin) = taps[j];
  return w;
}

}  // namespace

TEST_CASE("embedding rows are broadcast over time") {
  Mat<double> y(2, 3);
  y << 1, 2, 3, 4, 5, 6;
  Vec<double> e(1);
  e << 5;
  auto x = concat_embedding(y, e);
  REQUIRE(x.rows() == 3);
  CHECK(x.topRows(2) == y);
  CHECK(x.row(2) == Mat<double>::Constant(1, 3, 5.0));
  CHECK(concat_embedding(y, Vec<double>(0)) == y);
}

TEST_CASE("identity kernel passes the input through") {
  Rng rng(1);
  Mat<double> x = random_mat<double>(1, 9, rng);
  Mat<double> w(1, 1);
  w << 1;
  CHECK(dilated_conv1d_forward(x, w, Vec<double>(Vec<double>::Zero(1)), 1, 1) == x);
}

TEST_CASE("dilated two-tap sum by hand") {
  Mat<double> x(1, 4);
  x << 1, 2, 3, 4;
  Mat<double> w(1, 2);
  w << 1, 1;
  auto y = dilated_conv1d_forward(x, w, Vec<double>(Vec<double>::Zero(1)), 2, 2);
  Mat<double> want(1, 4);
  want << 1, 2, 4, 6;
  CHECK(y == want);
}

TEST_CASE("convolution matches the reference formula on random shapes") {
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const int cin = 1 + rep % 3, cout = 1 + rep % 4, k = 1 + rep % 3, d = 1 << (rep % 4), T = 5 + rep;
    Mat<double> x = random_mat<double>(cin, T, rng);
    std::vector<Mat<double>> taps;
    for (int j = 0; j < k; ++j) taps.push_back(random_mat<double>(cout, cin, rng));
    Vec<double> b = random_mat<double>(cout, 1, rng);
    auto got = dilated_conv1d_forward(x, pack_taps(taps), b, k, d);
    auto want = conv_oracle(x, taps, b, d);
    CHECK(got.cols() == T);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("convolution backward matches finite differences") {
  Rng rng(2);
  const int cin = 2, cout = 3, k = 2, d = 2, T = 7;
  Mat<double> x = random_mat<double>(cin, T, rng);
  Mat<double> w = random_mat<double>(cout, k * cin, rng);
  Vec<double> b = random_mat<double>(cout, 1, rng);
  Mat<double> g = random_mat<double>(cout, T, rng);
  auto objective = [&](const Mat<double>& xx, const Mat<double>& ww, const Vec<double>& bb) {
    return (dilated_conv1d_forward(xx, ww, bb, k, d).array() * g.array()).sum();
  };
  Mat<double> dw = Mat<double>::Zero(cout, k * cin);
  Vec<double> db = Vec<double>::Zero(cout);
  Mat<double> dx;
  dilated_conv1d_backward(x, g, w, k, d, dw, db, &dx);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    Mat<double> wp = w, wm = w;
    wp.data()[i] += h;
    wm.data()[i] -= h;
    CHECK(dw.data()[i] == doctest::Approx((objective(x, wp, b) - objective(x, wm, b)) / (2 * h)).epsilon(1e-6));
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Mat<double> xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    CHECK(dx.data()[i] == doctest::Approx((objective(xp, w, b) - objective(xm, w, b)) / (2 * h)).epsilon(1e-6));
  }
  for (int o = 0; o < cout; ++o) CHECK(db[o] == doctest::Approx(g.row(o).sum()));
}

TEST_CASE("asinh activation and derivative") {
  CHECK(activate(0.0, Activation::asinh) == 0.0);
  CHECK(activate_derivative(0.0, Activation::asinh) == 1.0);
  CHECK(activate(1.0, Activation::asinh) == doctest::Approx(std::log(1.0 + std::sqrt(2.0))).epsilon(1e-12));
  CHECK(std::abs(activate(1.0, Activation::asinh) - 0.881374) < 1e-5);
  Rng rng(3);
  Mat<double> m = random_mat<double>(4, 5, rng, 3.0);
  CHECK(activate(m, Activation::identity) == m);
  auto a = activate(m, Activation::asinh);
  for (Eigen::Index i = 0; i < m.size(); ++i) CHECK(a.data()[i] == doctest::Approx(std::asinh(m.data()[i])));
  for (double v : {-2.0, -0.3, 0.7, 4.0}) {
    const double h = 1e-6;
    CHECK(activate_derivative(v, Activation::asinh) ==
          doctest::Approx((std::asinh(v + h) - std::asinh(v - h)) / (2 * h)).epsilon(1e-6));
  }
  CHECK(to_string(Activation::identity) == "identity");
  CHECK(activation_from_string("asinh") == Activation::asinh);
}

TEST_CASE("dropout modes") {
  Rng rng(4);
  Mat<float> x = random_mat<float>(30, 30, rng);
  CHECK(dropout(x, 0.0, rng, Mode::train) == x);
  CHECK(dropout(x, 0.7, rng, Mode::eval) == x);
  CHECK_THROWS(dropout_mask<float>(2, 2, 1.0, rng));
  CHECK_THROWS(dropout_mask<float>(2, 2, -0.1, rng));
}

TEST_CASE("inverted dropout keeps about half and preserves the mean") {
  Rng rng(5);
  const int n = 200 * 200;
  auto mask = dropout_mask<double>(200, 200, 0.5, rng);
  int kept = 0;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    const double v = mask.data()[i];
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  const double sigma = std::sqrt(n * 0.25);
  CHECK(std::abs(kept - n * 0.5) < 3 * sigma);
  CHECK(std::abs(mask.mean() - 1.0) < 3 * 2 * 0.5 / std::sqrt(double(n)));
  Rng a(9), b(9);
  CHECK(dropout_mask<float>(5, 5, 0.3, a) == dropout_mask<float>(5, 5, 0.3, b));
}

TEST_CASE("mean pooling by the receptive field") {
  Mat<double> x(1, 4);
  x << 1, 2, 3, 4;
  auto y = temporal_downsample(x, 4);
  REQUIRE(y.cols() == 1);
  CHECK(y(0, 0) == 2.5);
  CHECK(temporal_downsample(x, 1) == x);
  Mat<double> big = Mat<double>::Ones(3, 256);
  CHECK(temporal_downsample(big, 64).cols() == 4);
  CHECK_THROWS(temporal_downsample(x, 3));
  Mat<double> s = temporal_downsample(x, 2, DownsampleMode::stride);
  CHECK(s.cols() == 2);
}

TEST_CASE("downsample backward is the adjoint") {
  Rng rng(6);
  for (auto mode : {DownsampleMode::mean, DownsampleMode::stride}) {
    Mat<double> x = random_mat<double>(3, 16, rng);
    Mat<double> g = random_mat<double>(3, 4, rng);
    const double lhs = (temporal_downsample(x, 4, mode).array() * g.array()).sum();
    const double rhs = (x.array() * temporal_downsample_backward(g, 4, mode, 16).array()).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(7);
  Mat<double> logits = random_mat<double>(20, 9, rng, 10.0);
  auto p = softmax(logits);
  for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-12);
  Mat<float> huge(1, 2);
  huge << 1000.0f, -1000.0f;
  auto q = softmax(huge);
  CHECK(q.allFinite());
  CHECK(q(0, 0) == doctest::Approx(1.0f));
}

TEST_CASE("cross-entropy closed forms") {
  Mat<double> z = Mat<double>::Zero(1, 2);
  std::vector<int> l0{0};
  CHECK(cross_entropy(z, std::span<const int>(l0)).loss == doctest::Approx(std::log(2.0)));
  Mat<double> u = Mat<double>::Zero(1, 118);
  CHECK(cross_entropy(u, std::span<const int>(l0)).loss == doctest::Approx(4.77068).epsilon(1e-6));
  Mat<double> sharp(1, 2);
  sharp << 10, -10;
  CHECK(cross_entropy(sharp, std::span<const int>(l0)).loss < 1e-4);
  std::vector<int> bad{2};
  CHECK_THROWS(cross_entropy(z, std::span<const int>(bad)));
}

TEST_CASE("cross-entropy gradient is (softmax - onehot) / batch") {
  Rng rng(8);
  Mat<double> logits = random_mat<double>(3, 4, rng);
  std::vector<int> labels{1, 3, 0};
  auto r = cross_entropy(logits, std::span<const int>(labels));
  Mat<double> want = softmax(logits);
  for (int b = 0; b < 3; ++b) want(b, labels[static_cast<std::size_t>(b)]) -= 1.0;
  want /= 3.0;
  CHECK((r.dlogits - want).cwiseAbs().maxCoeff() < 1e-12);
}
