#include <cmath>
#include <vector>

#include "doctest.h"

#include "groupdecode/model.hpp"
#include "model_oracles.hpp"
#include "test_util.hpp"

using namespace gdec;
using gdec::testing::random_mat;

namespace {

ModelConfig tiny(int C = 3, int T = 8, int L = 2, int E = 0) {
  ModelConfig c;
  c.n_input_channels = C;
  c.n_timesteps = T;
  c.n_conv_layers = L;
  c.n_classes = 3;
  c.hidden_channels = 4;
  c.fc_hidden = 5;
  c.dropout = 0.0;
  c.embedding_size = E;
  c.n_subjects = E > 0 ? 3 : 1;
  return c;
}

template <class Real>
Batch<Real> batch_of(const std::vector<Mat<Real>>& xs, std::vector<int> subjects) {
  Batch<Real> b;
  for (const auto& x : xs) b.inputs.push_back(&x);
  b.subjects = std::move(subjects);
  return b;
}

}  // namespace

TEST_CASE("receptive field arithmetic") {
  ModelConfig c = tiny(3, 256, 6);
  CHECK(c.receptive_field() == 64);
  CHECK(c.pooled_length() == 4);
  c.n_conv_layers = 3;
  CHECK(c.receptive_field() == 8);
  c.kernel_size = 3;
  CHECK(c.receptive_field() == 15);
  ModelConfig bad = tiny(3, 12, 3);
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("receptive field"), std::invalid_argument);
}

TEST_CASE("config json round-trip and difference report") {
  ModelConfig c = tiny(3, 16, 2, 2);
  c.activation_mask = {true, false, true};
  CHECK(model_config_from_json(to_json(c)) == c);
  ModelConfig d = c;
  d.hidden_channels = 7;
  CHECK(first_difference(c, d) == "hidden_channels");
  CHECK(first_difference(c, c).empty());
}

TEST_CASE("parameter shapes follow the config") {
  ModelConfig c = tiny(3, 16, 2, 2);
  WavenetClassifier<float> m(c, 1);
  CHECK(m.conv_weight(0).rows() == 4);
  CHECK(m.conv_weight(0).cols() == 2 * (3 + 2));
  CHECK(m.conv_weight(1).cols() == 2 * 4);
  CHECK(m.fc_weight(0).cols() == 4 * 4);
  CHECK(m.fc_weight(1).rows() == 3);
  CHECK(m.embeddings().rows() == 3);
  CHECK(m.embeddings().cols() == 2);
  WavenetClassifier<float> plain(tiny());
  CHECK_THROWS(plain.embeddings());
}

TEST_CASE("zero parameters give zero logits and a uniform softmax") {
  WavenetClassifier<float> m(tiny());
  Rng rng(1);
  std::vector<Mat<float>> xs{random_mat<float>(3, 8, rng)};
  auto logits = m.forward(batch_of(xs, {0}), Mode::eval);
  CHECK(logits.cwiseAbs().maxCoeff() == 0.0f);
  auto p = softmax(logits);
  for (int c = 0; c < 3; ++c) CHECK(p(0, c) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("forward agrees with the straight-line oracle") {
  Rng rng(2);
  for (auto ds : {DownsampleMode::mean, DownsampleMode::stride})
    for (int E : {0, 2}) {
      ModelConfig c = tiny(3, 8, 2, E);
      c.downsample = ds;
      auto m = WavenetClassifier<float>(c, 7).cast<double>();
      std::vector<Mat<double>> xs{random_mat<double>(3, 8, rng), random_mat<double>(3, 8, rng)};
      auto logits = m.forward(batch_of(xs, {0, c.n_subjects - 1}), Mode::eval);
      for (int b = 0; b < 2; ++b) {
        auto want = gdec::testing::reference_logits(m, xs[static_cast<std::size_t>(b)], b == 0 ? 0 : c.n_subjects - 1);
        for (int k = 0; k < 3; ++k) CHECK(logits(b, k) == doctest::Approx(want[static_cast<std::size_t>(k)]).epsilon(1e-12));
      }
    }
}

TEST_CASE("eval forward is deterministic and train dropout is seeded") {
  ModelConfig c = tiny();
  c.dropout = 0.5;
  WavenetClassifier<float> m(c, 3);
  Rng rng(3);
  std::vector<Mat<float>> xs{random_mat<float>(3, 8, rng)};
  auto b = batch_of(xs, {0});
  CHECK(m.forward(b, Mode::eval) == m.forward(b, Mode::eval));
  Rng r1(5), r2(5);
  CHECK(m.forward(b, Mode::train, &r1) == m.forward(b, Mode::train, &r2));
  CHECK_THROWS(m.forward(b, Mode::train));
}

TEST_CASE("input shape is checked") {
  WavenetClassifier<float> m(tiny(), 1);
  std::vector<Mat<float>> xs{Mat<float>::Zero(2, 8)};
  CHECK_THROWS_AS(m.forward(batch_of(xs, {0}), Mode::eval), std::invalid_argument);
}

TEST_CASE("gradients match central differences on random tiny configs") {
  Rng rng(2024);
  for (int rep = 0; rep < 25; ++rep) {
    const ModelConfig c = gdec::testing::random_tiny_config(rng);
    CAPTURE(to_json(c).dump());
    const auto r = gdec::testing::gradient_check(c, static_cast<std::uint64_t>(rep));
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("absent subjects get zero embedding gradient") {
  ModelConfig c = tiny(2, 8, 2, 2);
  auto m = WavenetClassifier<float>(c, 4).cast<double>();
  Rng rng(4);
  std::vector<Mat<double>> xs{random_mat<double>(2, 8, rng), random_mat<double>(2, 8, rng)};
  std::vector<int> labels{0, 2};
  ForwardCache<double> cache;
  auto logits = m.forward(batch_of(xs, {0, 0}), Mode::train, nullptr, &cache);
  auto g = m.backward(cache, cross_entropy(logits, std::span<const int>(labels)).dlogits);
  const auto& ge = g.arrays.back();
  CHECK(ge.row(0).cwiseAbs().maxCoeff() > 0.0);
  CHECK(ge.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.all_finite());
}

TEST_CASE("duplicated example leaves the mean gradient unchanged") {
  ModelConfig c = tiny(2, 8, 2, 1);
  auto m = WavenetClassifier<float>(c, 5).cast<double>();
  Rng rng(5);
  std::vector<Mat<double>> one{random_mat<double>(2, 8, rng)};
  std::vector<Mat<double>> two{one[0], one[0]};
  auto grad = [&](const std::vector<Mat<double>>& xs, std::vector<int> labels) {
    ForwardCache<double> cache;
    auto logits = m.forward(batch_of(xs, std::vector<int>(xs.size(), 1)), Mode::train, nullptr, &cache);
    return m.backward(cache, cross_entropy(logits, std::span<const int>(labels)).dlogits);
  };
  auto g1 = grad(one, {1});
  auto g2 = grad(two, {1, 1});
  for (std::size_t i = 0; i < g1.arrays.size(); ++i) CHECK((g1.arrays[i] - g2.arrays[i]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("perturbing one sample only reaches the receptive field ahead of it") {
  Rng rng(6);
  for (int L : {3, 6}) {
    ModelConfig c = tiny(3, 256, L);
    WavenetClassifier<float> m(c, 11);
    Trial x = random_mat<float>(3, 256, rng);
    const int rf = 1 << L;
    for (int t0 : {0, 37, 200, 255}) {
      auto changed = gdec::testing::changed_positions(m, x, t0);
      REQUIRE_FALSE(changed.empty());
      CHECK(changed.front() == t0);
      CHECK(changed.back() <= std::min(255, t0 + rf - 1));
      if (t0 + rf - 1 <= 255) CHECK(changed.back() == t0 + rf - 1);
    }
  }
}

TEST_CASE("every conv layer preserves the time length") {
  ModelConfig c = tiny(3, 64, 4);
  WavenetClassifier<float> m(c, 1);
  Rng rng(7);
  for (const auto& a : m.conv_activations(random_mat<float>(3, 64, rng), 0, 3)) CHECK(a.cols() == 64);
}

TEST_CASE("bias-free linear variant is homogeneous and additive") {
  ModelConfig c = tiny(3, 32, 3);
  c.activation = Activation::identity;
  WavenetClassifier<float> m(c, 8);
  for (std::size_t i = 1; i < m.parameters().size(); i += 2) m.parameters()[i].setZero();
  Rng rng(8);
  std::vector<Mat<float>> x{random_mat<float>(3, 32, rng)}, y{random_mat<float>(3, 32, rng)};
  std::vector<Mat<float>> ax{x[0] * 2.5f}, xy{x[0] + y[0]};
  auto fx = m.forward(batch_of(x, {0}), Mode::eval);
  auto fy = m.forward(batch_of(y, {0}), Mode::eval);
  const float scale = std::max(fx.cwiseAbs().maxCoeff(), fy.cwiseAbs().maxCoeff());
  CHECK((m.forward(batch_of(ax, {0}), Mode::eval) - 2.5f * fx).cwiseAbs().maxCoeff() <= 1e-5f * 2.5f * scale);
  CHECK((m.forward(batch_of(xy, {0}), Mode::eval) - fx - fy).cwiseAbs().maxCoeff() <= 1e-5f * scale);
}

TEST_CASE("logits ignore other subjects' embedding rows") {
  ModelConfig c = tiny(3, 8, 2, 2);
  WavenetClassifier<float> m(c, 9);
  Rng rng(9);
  std::vector<Mat<float>> xs{random_mat<float>(3, 8, rng)};
  auto before = m.forward(batch_of(xs, {1}), Mode::eval);
  m.embeddings().row(0).setConstant(42.0f);
  m.embeddings().row(2).setConstant(-7.0f);
  CHECK(m.forward(batch_of(xs, {1}), Mode::eval) == before);
  m.embeddings().row(1).setConstant(3.0f);
  CHECK_FALSE(m.forward(batch_of(xs, {1}), Mode::eval) == before);
}

TEST_CASE("softmax of model logits sums to one") {
  WavenetClassifier<float> m(tiny(3, 8, 2), 10);
  Rng rng(10);
  std::vector<Mat<float>> xs;
  for (int i = 0; i < 6; ++i) xs.push_back(random_mat<float>(3, 8, rng, 5.0));
  auto p = softmax(m.forward(batch_of(xs, std::vector<int>(6, 0)), Mode::eval));
  for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0f) < 1e-6f);
}

TEST_CASE("one Adam step from zero with unit gradient") {
  std::vector<Mat<double>> params{Mat<double>::Zero(2, 2)};
  GradientSet<double> g{{Mat<double>::Ones(2, 2)}};
  auto state = make_adam_state(params);
  AdamOptions opt;
  opt.lr = 1e-4;
  adam_step(params, g, state, opt);
  CHECK(state.step == 1);
  // m_hat = v_hat = 1, step = lr / (1 + eps)
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(params[0].data()[i] == doctest::Approx(-1e-4 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  Rng rng(11);
  std::vector<Mat<float>> params{random_mat<float>(3, 3, rng)};
  const auto saved = params;
  auto state = make_adam_state(params);
  adam_step(params, GradientSet<float>::zeros_like(params), state, AdamOptions{});
  CHECK(params == saved);
}

TEST_CASE("Adam matches a scalar transcription over several steps") {
  std::vector<Mat<double>> params{Mat<double>::Constant(1, 1, 0.3)};
  auto state = make_adam_state(params);
  AdamOptions opt;
  opt.lr = 0.01;
  double theta = 0.3, m = 0, v = 0;
  for (int t = 1; t <= 5; ++t) {
    const double grad = std::sin(t) + theta;
    GradientSet<double> g{{Mat<double>::Constant(1, 1, grad)}};
    adam_step(params, g, state, opt);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(params[0](0, 0) == doctest::Approx(theta).epsilon(1e-12));
  }
}

TEST_CASE("two identical training trajectories are bit-identical") {
  ModelConfig c = tiny(3, 8, 2, 1);
  c.dropout = 0.3;
  Rng data(12);
  std::vector<Mat<float>> xs{random_mat<float>(3, 8, data), random_mat<float>(3, 8, data)};
  std::vector<int> labels{0, 2};
  auto run = [&] {
    WavenetClassifier<float> m(c, 13);
    auto state = make_adam_state(m.parameters());
    Rng rng(14);
    for (int step = 0; step < 5; ++step) {
      ForwardCache<float> cache;
      auto logits = m.forward(batch_of(xs, {0, 2}), Mode::train, &rng, &cache);
      adam_step(m.parameters(), m.backward(cache, cross_entropy(logits, std::span<const int>(labels)).dlogits), state,
                AdamOptions{});
    }
    return m.parameters();
  };
  CHECK(run() == run());
}
