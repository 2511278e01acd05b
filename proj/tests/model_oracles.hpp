#pragma once

// Reference computations shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "groupdecode/layers.hpp"
#include "groupdecode/model.hpp"

namespace gdec::testing {

/// Logits of one trial computed with plain loops, independent of the library layers.
inline std::vector<double> reference_logits(const WavenetClassifier<double>& m, const Mat<double>& x, int subject) {
  const ModelConfig& c = m.config();
  const int T = c.n_timesteps, k = c.kernel_size, H = c.hidden_channels, E = c.embedding_size;
  auto act = [&](double v, int layer) {
    const bool on = c.activation == Activation::asinh &&
                    (c.activation_mask.empty() || c.activation_mask[static_cast<std::size_t>(layer)]);
    return on ? std::log(v + std::sqrt(1.0 + v * v)) : v;
  };
  std::vector<std::vector<double>> a(static_cast<std::size_t>(c.n_input_channels + E), std::vector<double>(T));
  for (int i = 0; i < c.n_input_channels; ++i)
    for (int t = 0; t < T; ++t) a[i][t] = x(i, t);
  for (int j = 0; j < E; ++j)
    for (int t = 0; t < T; ++t) a[c.n_input_channels + j][t] = m.embeddings()(subject, j);
  for (int l = 0; l < c.n_conv_layers; ++l) {
    const int d = 1 << l;
    const int cin = static_cast<int>(a.size());
    const auto& w = m.conv_weight(l);
    const auto& b = m.conv_bias(l);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(H), std::vector<double>(T));
    for (int o = 0; o < H; ++o)
      for (int t = 0; t < T; ++t) {
        double acc = b(o, 0);
        for (int j = 0; j < k; ++j) {
          const int src = t - d * (k - 1) + d * j;
          if (src < 0) continue;
          for (int i = 0; i < cin; ++i) acc += w(o, j * cin + i) * a[i][src];
        }
        out[o][t] = act(acc, l);
      }
    a = std::move(out);
  }
  const int rf = c.receptive_field();
  const int P = T / rf;
  std::vector<double> flat;
  for (int h = 0; h < H; ++h)
    for (int p = 0; p < P; ++p) {
      if (c.downsample == DownsampleMode::mean) {
        double s = 0;
        for (int q = 0; q < rf; ++q) s += a[h][p * rf + q];
        flat.push_back(s / rf);
      } else {
        flat.push_back(a[h][p * rf + rf - 1]);
      }
    }
  std::vector<double> hidden(static_cast<std::size_t>(c.fc_hidden));
  for (int r = 0; r < c.fc_hidden; ++r) {
    double s = m.fc_bias(0)(r, 0);
    for (std::size_t f = 0; f < flat.size(); ++f) s += m.fc_weight(0)(r, static_cast<Eigen::Index>(f)) * flat[f];
    hidden[r] = act(s, c.n_conv_layers);
  }
  std::vector<double> logits(static_cast<std::size_t>(c.n_classes));
  for (int r = 0; r < c.n_classes; ++r) {
    double s = m.fc_bias(1)(r, 0);
    for (int f = 0; f < c.fc_hidden; ++f) s += m.fc_weight(1)(r, f) * hidden[f];
    logits[r] = s;
  }
  return logits;
}

/// Random tiny architecture (C<=4, T<=16, L<=3, E<=2) with dropout disabled.
inline ModelConfig random_tiny_config(Rng& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ModelConfig c;
  c.n_conv_layers = pick(1, 3);
  const int rf = 1 << c.n_conv_layers;
  c.n_timesteps = rf * pick(1, 16 / rf);
  c.n_input_channels = pick(1, 4);
  c.n_classes = pick(2, 4);
  c.kernel_size = 2;
  c.hidden_channels = pick(1, 4);
  c.fc_hidden = pick(1, 5);
  c.dropout = 0.0;
  c.embedding_size = pick(0, 2);
  c.n_subjects = pick(1, 3);
  c.activation = pick(0, 3) == 0 ? Activation::identity : Activation::asinh;
  c.downsample = pick(0, 3) == 0 ? DownsampleMode::stride : DownsampleMode::mean;
  return c;
}

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t n_checked = 0;
};

/// Central differences of the mean cross-entropy against backward() at 64-bit precision.
/// Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients
/// from turning rounding noise into large ratios.
inline GradCheck gradient_check(const ModelConfig& cfg, std::uint64_t seed, double h = 1e-6, double floor = 1e-6) {
  Rng rng = make_rng(seed, 1);
  WavenetClassifier<double> model = WavenetClassifier<float>(cfg, seed).cast<double>();
  // biases start away from zero so every path is exercised
  std::normal_distribution<double> nd(0.0, 0.5);
  for (auto& p : model.parameters())
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += 0.1 * nd(rng);

  const int B = 3;
  std::vector<Mat<double>> xs;
  std::vector<int> subjects, labels;
  for (int b = 0; b < B; ++b) {
    Mat<double> x(cfg.n_input_channels, cfg.n_timesteps);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng) * 2.0;
    xs.push_back(std::move(x));
    subjects.push_back(std::uniform_int_distribution<int>(0, cfg.n_subjects - 1)(rng));
    labels.push_back(std::uniform_int_distribution<int>(0, cfg.n_classes - 1)(rng));
  }
  Batch<double> batch;
  for (int b = 0; b < B; ++b) batch.inputs.push_back(&xs[static_cast<std::size_t>(b)]);
  batch.subjects = subjects;

  auto loss = [&](const WavenetClassifier<double>& m) {
    return cross_entropy(m.forward(batch, Mode::eval), std::span<const int>(labels)).loss;
  };
  ForwardCache<double> cache;
  const Mat<double> logits = model.forward(batch, Mode::train, nullptr, &cache);
  const auto lr = cross_entropy(logits, std::span<const int>(labels));
  const auto grads = model.backward(cache, lr.dlogits);

  GradCheck out;
  for (std::size_t p = 0; p < model.parameters().size(); ++p) {
    for (Eigen::Index i = 0; i < model.parameters()[p].size(); ++i) {
      double& v = model.parameters()[p].data()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss(model);
      v = saved - h;
      const double down = loss(model);
      v = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads.arrays[p].data()[i];
      const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
      out.max_relative_error = std::max(out.max_relative_error, std::abs(numeric - analytic) / denom);
      ++out.n_checked;
    }
  }
  return out;
}

/// Positions of the last conv layer's output that change when input sample t0 is perturbed.
inline std::vector<int> changed_positions(const WavenetClassifier<float>& m, const Trial& x, int t0) {
  const int last = m.config().n_conv_layers - 1;
  Trial y = x;
  for (Eigen::Index c = 0; c < y.rows(); ++c) y(c, t0) += 1.0f;
  const Mat<float> a = m.conv_activations(x, 0, last).back();
  const Mat<float> b = m.conv_activations(y, 0, last).back();
  std::vector<int> out;
  for (Eigen::Index t = 0; t < a.cols(); ++t)
    if ((a.col(t) - b.col(t)).cwiseAbs().maxCoeff() > 0.0f) out.push_back(static_cast<int>(t));
  return out;
}

/// Single linear conv layer with one input and one output channel: y[t] = w0 x[t-1] + w1 x[t].
inline WavenetClassifier<float> two_tap_model(float w0, float w1, int T) {
  ModelConfig c;
  c.n_input_channels = 1;
  c.n_classes = 2;
  c.n_timesteps = T;
  c.n_conv_layers = 1;
  c.kernel_size = 2;
  c.hidden_channels = 1;
  c.fc_hidden = 1;
  c.dropout = 0.0;
  c.activation = Activation::identity;
  WavenetClassifier<float> m(c);
  m.conv_weight(0)(0, 0) = w0;
  m.conv_weight(0)(0, 1) = w1;
  return m;
}

/// |H(w)|^2 of the two-tap filter at each frequency.
inline std::vector<double> two_tap_response(const std::vector<double>& freqs, double sfreq, double w0, double w1) {
  std::vector<double> out;
  for (double f : freqs) {
    const double w = 2.0 * 3.14159265358979323846 * f / sfreq;
    out.push_back(w0 * w0 + w1 * w1 + 2.0 * w0 * w1 * std::cos(w));
  }
  return out;
}

/// The same response as a one-sided density: DC and Nyquist carry half the weight of interior bins.
inline std::vector<double> two_tap_one_sided(const std::vector<double>& freqs, double sfreq, double w0, double w1) {
  auto out = two_tap_response(freqs, sfreq, w0, w1);
  for (std::size_t k = 0; k < out.size(); ++k)
    if (freqs[k] == 0.0 || freqs[k] == sfreq / 2.0) out[k] *= 0.5;
  return out;
}

}  // namespace gdec::testing
