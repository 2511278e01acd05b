#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "groupdecode/layers.hpp"
#include "groupdecode/types.hpp"

namespace gdec {

struct ModelConfig {
  int n_input_channels = 0;
  int n_classes = 0;
  int n_timesteps = 0;
  int n_conv_layers = 6;
  int kernel_size = 2;
  int hidden_channels = 128;
  int fc_hidden = 512;
  double dropout = 0.4;
  /// 0 disables the subject embedding table.
  int embedding_size = 0;
  int n_subjects = 1;
  Activation activation = Activation::asinh;
  /// Optional per-layer switch, L conv layers then the dense hidden layer; empty applies the activation everywhere.
  std::vector<bool> activation_mask;
  DownsampleMode downsample = DownsampleMode::mean;

  /// Input span of one pre-downsampling output: 1 + (k-1)(2^L - 1), i.e. 2^L for k = 2.
  int receptive_field() const;
  int pooled_length() const { return n_timesteps / receptive_field(); }
  int flat_features() const { return hidden_channels * pooled_length(); }
  int conv_input_channels(int layer) const;
  bool layer_activated(int layer) const;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
/// Names the first field that differs, or returns an empty string.
std::string first_difference(const ModelConfig& a, const ModelConfig& b);

/// Shape-matched gradient (or moment) arrays, one per parameter array.
template <class Real>
struct GradientSet {
  std::vector<Mat<Real>> arrays;

  static GradientSet zeros_like(const std::vector<Mat<Real>>& params);
  bool all_finite() const;
};

/// Non-owning batch: input trials (C x T) and each one's subject row in the embedding table.
template <class Real>
struct Batch {
  std::vector<const Mat<Real>*> inputs;
  std::vector<int> subjects;

  std::size_t size() const { return inputs.size(); }
};

/// Activations retained by a training forward pass for the backward pass.
template <class Real>
struct ForwardCache {
  struct Example {
    Mat<Real> input;                 // (C+E) x T
    std::vector<Mat<Real>> pre;      // per conv layer, before activation
    std::vector<Mat<Real>> post;     // per conv layer, after activation and dropout
    std::vector<Mat<Real>> mask;     // per conv layer dropout mask (empty when disabled)
  };
  std::vector<Example> examples;
  std::vector<int> subjects;
  Mat<Real> flat;        // B x F
  Mat<Real> flat_mask;   // dropout before the first dense layer
  Mat<Real> hidden_pre;  // B x fc_hidden
  Mat<Real> hidden;      // after activation and dropout
  Mat<Real> hidden_mask;
};

/// Dilated-convolution classifier with optional subject embeddings.
///
/// conv block: L causal dilated conv layers (dilation 2^l) -> activation -> dropout
/// then temporal downsampling by the receptive field, flatten,
/// dropout -> dense(fc_hidden) -> activation -> dropout -> dense(n_classes).
template <class Real>
class WavenetClassifier {
 public:
  /// All parameters zero.
  explicit WavenetClassifier(const ModelConfig& cfg);
  /// Fan-in scaled uniform weights and N(0, 1/E) embeddings.
  WavenetClassifier(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  std::vector<Mat<Real>>& parameters() { return params_; }
  const std::vector<Mat<Real>>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  std::size_t parameter_count() const;

  Mat<Real>& conv_weight(int layer) { return params_[static_cast<std::size_t>(2 * layer)]; }
  Mat<Real>& conv_bias(int layer) { return params_[static_cast<std::size_t>(2 * layer + 1)]; }
  const Mat<Real>& conv_weight(int layer) const { return params_[static_cast<std::size_t>(2 * layer)]; }
  const Mat<Real>& conv_bias(int layer) const { return params_[static_cast<std::size_t>(2 * layer + 1)]; }
  Mat<Real>& fc_weight(int i) { return params_[fc_index(i)]; }
  Mat<Real>& fc_bias(int i) { return params_[fc_index(i) + 1]; }
  const Mat<Real>& fc_weight(int i) const { return params_[fc_index(i)]; }
  const Mat<Real>& fc_bias(int i) const { return params_[fc_index(i) + 1]; }
  bool has_embeddings() const { return cfg_.embedding_size > 0; }
  /// S x E table; throws when embeddings are disabled.
  Mat<Real>& embeddings();
  const Mat<Real>& embeddings() const;

  /// Logits (batch x classes). Train mode draws dropout masks from rng; cache may be null.
  Mat<Real> forward(const Batch<Real>& batch, Mode mode, Rng* rng = nullptr, ForwardCache<Real>* cache = nullptr) const;

  /// Exact reverse-mode gradients for the batch cached by forward().
  GradientSet<Real> backward(const ForwardCache<Real>& cache, const Mat<Real>& dlogits) const;

  /// Eval-mode predictions (argmax of logits).
  std::vector<int> predict(const Batch<Real>& batch) const;

  /// Eval-mode outputs of conv layers 0..last_layer for one trial; element l is H x T after activation.
  std::vector<Mat<Real>> conv_activations(const Mat<Real>& x, int subject, int last_layer) const;

  template <class Other>
  WavenetClassifier<Other> cast() const {
    WavenetClassifier<Other> out(cfg_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i] = params_[i].template cast<Other>();
    return out;
  }

 private:
  std::size_t fc_index(int i) const { return static_cast<std::size_t>(2 * cfg_.n_conv_layers + 2 * i); }
  std::size_t embedding_index() const { return static_cast<std::size_t>(2 * cfg_.n_conv_layers + 4); }
  Mat<Real> conv_input(const Mat<Real>& x, int subject) const;

  ModelConfig cfg_;
  std::vector<Mat<Real>> params_;
  std::vector<std::string> names_;
};

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class Real>
struct AdamState {
  GradientSet<Real> m;
  GradientSet<Real> v;
  std::int64_t step = 0;
};

template <class Real>
AdamState<Real> make_adam_state(const std::vector<Mat<Real>>& params);

/// One bias-corrected Adam update; increments state.step first.
template <class Real>
void adam_step(std::vector<Mat<Real>>& params, const GradientSet<Real>& grads, AdamState<Real>& state,
               const AdamOptions& opt);

}  // namespace gdec
