#include "groupdecode/model.hpp"

#include <cmath>
#include <stdexcept>

namespace gdec {

// ---------------------------------------------------------------------------
// ModelConfig

int ModelConfig::receptive_field() const {
  return 1 + (kernel_size - 1) * ((1 << n_conv_layers) - 1);
}

int ModelConfig::conv_input_channels(int layer) const {
  return layer == 0 ? n_input_channels + embedding_size : hidden_channels;
}

bool ModelConfig::layer_activated(int layer) const {
  if (activation == Activation::identity) return false;
  if (activation_mask.empty()) return true;
  return activation_mask.at(static_cast<std::size_t>(layer));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid model config: " + msg); };
  if (n_input_channels < 1) fail("n_input_channels must be positive");
  if (n_classes < 2) fail("n_classes must be at least 2");
  if (n_timesteps < 1) fail("n_timesteps must be positive");
  if (n_conv_layers < 1 || n_conv_layers > 20) fail("n_conv_layers must lie in [1, 20]");
  if (kernel_size < 1) fail("kernel_size must be positive");
  if (hidden_channels < 1) fail("hidden_channels must be positive");
  if (fc_hidden < 1) fail("fc_hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (embedding_size < 0) fail("embedding_size must be non-negative");
  if (n_subjects < 1) fail("n_subjects must be positive");
  if (!activation_mask.empty() && static_cast<int>(activation_mask.size()) != n_conv_layers + 1)
    fail("activation_mask needs n_conv_layers + 1 entries");
  if (n_timesteps % receptive_field() != 0)
    fail("n_timesteps=" + std::to_string(n_timesteps) + " is not divisible by the receptive field " +
         std::to_string(receptive_field()));
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_input_channels", c.n_input_channels},
          {"n_classes", c.n_classes},
          {"n_timesteps", c.n_timesteps},
          {"n_conv_layers", c.n_conv_layers},
          {"kernel_size", c.kernel_size},
          {"hidden_channels", c.hidden_channels},
          {"fc_hidden", c.fc_hidden},
          {"dropout", c.dropout},
          {"embedding_size", c.embedding_size},
          {"n_subjects", c.n_subjects},
          {"activation", to_string(c.activation)},
          {"activation_mask", c.activation_mask},
          {"downsample", to_string(c.downsample)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_input_channels = j.at("n_input_channels").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.n_timesteps = j.at("n_timesteps").get<int>();
  c.n_conv_layers = j.at("n_conv_layers").get<int>();
  c.kernel_size = j.at("kernel_size").get<int>();
  c.hidden_channels = j.at("hidden_channels").get<int>();
  c.fc_hidden = j.at("fc_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.embedding_size = j.at("embedding_size").get<int>();
  c.n_subjects = j.at("n_subjects").get<int>();
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.activation_mask = j.value("activation_mask", std::vector<bool>{});
  c.downsample = downsample_from_string(j.value("downsample", std::string("mean")));
  return c;
}

std::string first_difference(const ModelConfig& a, const ModelConfig& b) {
  const auto ja = to_json(a);
  const auto jb = to_json(b);
  for (const auto& [key, value] : ja.items())
    if (!jb.contains(key) || jb.at(key) != value) return key;
  return {};
}

// ---------------------------------------------------------------------------
// GradientSet

template <class Real>
GradientSet<Real> GradientSet<Real>::zeros_like(const std::vector<Mat<Real>>& params) {
  GradientSet g;
  g.arrays.reserve(params.size());
  for (const auto& p : params) g.arrays.push_back(Mat<Real>::Zero(p.rows(), p.cols()));
  return g;
}

template <class Real>
bool GradientSet<Real>::all_finite() const {
  for (const auto& a : arrays)
    if (!a.allFinite()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// WavenetClassifier

template <class Real>
WavenetClassifier<Real>::WavenetClassifier(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int L = cfg_.n_conv_layers;
  const int k = cfg_.kernel_size;
  const int H = cfg_.hidden_channels;
  for (int l = 0; l < L; ++l) {
    params_.push_back(Mat<Real>::Zero(H, k * cfg_.conv_input_channels(l)));
    params_.push_back(Mat<Real>::Zero(H, 1));
    names_.push_back("conv" + std::to_string(l) + ".weight");
    names_.push_back("conv" + std::to_string(l) + ".bias");
  }
  params_.push_back(Mat<Real>::Zero(cfg_.fc_hidden, cfg_.flat_features()));
  params_.push_back(Mat<Real>::Zero(cfg_.fc_hidden, 1));
  params_.push_back(Mat<Real>::Zero(cfg_.n_classes, cfg_.fc_hidden));
  params_.push_back(Mat<Real>::Zero(cfg_.n_classes, 1));
  names_.insert(names_.end(), {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"});
  if (cfg_.embedding_size > 0) {
    params_.push_back(Mat<Real>::Zero(cfg_.n_subjects, cfg_.embedding_size));
    names_.push_back("embedding");
  }
}

template <class Real>
WavenetClassifier<Real>::WavenetClassifier(const ModelConfig& cfg, std::uint64_t seed) : WavenetClassifier(cfg) {
  Rng rng = make_rng(seed, 100);
  auto fill_uniform = [&](Mat<Real>& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(u(rng));
  };
  // weight and bias pairs: fan-in of a row is the weight's column count
  for (std::size_t i = 0; i + 1 < fc_index(2); i += 2) {
    const double fan_in = static_cast<double>(params_[i].cols());
    fill_uniform(params_[i], std::sqrt(3.0 / fan_in));
    fill_uniform(params_[i + 1], 1.0 / std::sqrt(fan_in));
  }
  if (has_embeddings()) {
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg_.embedding_size)));
    auto& table = params_[embedding_index()];
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = static_cast<Real>(normal(rng));
  }
}

template <class Real>
std::size_t WavenetClassifier<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
  return n;
}

template <class Real>
Mat<Real>& WavenetClassifier<Real>::embeddings() {
  if (!has_embeddings()) throw std::logic_error("model has no subject embeddings");
  return params_[embedding_index()];
}

template <class Real>
const Mat<Real>& WavenetClassifier<Real>::embeddings() const {
  if (!has_embeddings()) throw std::logic_error("model has no subject embeddings");
  return params_[embedding_index()];
}

template <class Real>
Mat<Real> WavenetClassifier<Real>::conv_input(const Mat<Real>& x, int subject) const {
  if (x.rows() != cfg_.n_input_channels || x.cols() != cfg_.n_timesteps)
    throw std::invalid_argument("input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                                ", model expects " + std::to_string(cfg_.n_input_channels) + "x" +
                                std::to_string(cfg_.n_timesteps));
  if (!has_embeddings()) return x;
  if (subject < 0 || subject >= cfg_.n_subjects)
    throw std::out_of_range("subject index " + std::to_string(subject) + " outside the embedding table");
  const Vec<Real> e = params_[embedding_index()].row(subject).transpose();
  return concat_embedding(x, e);
}

namespace {

template <class Real>
Vec<Real> as_vec(const Mat<Real>& column) {
  return Eigen::Map<const Vec<Real>>(column.data(), column.size());
}

template <class Real>
Mat<Real> activation_derivative(const Mat<Real>& pre) {
  return (pre.array().square() + Real(1)).rsqrt().matrix();
}

}  // namespace

template <class Real>
Mat<Real> WavenetClassifier<Real>::forward(const Batch<Real>& batch, Mode mode, Rng* rng,
                                           ForwardCache<Real>* cache) const {
  const bool train = mode == Mode::train && cfg_.dropout > 0.0;
  if (train && rng == nullptr) throw std::invalid_argument("train-mode forward with dropout needs an rng");
  if (batch.inputs.size() != batch.subjects.size()) throw std::invalid_argument("batch inputs/subjects mismatch");
  const auto B = static_cast<Eigen::Index>(batch.size());
  const int L = cfg_.n_conv_layers;
  const int rf = cfg_.receptive_field();
  const Eigen::Index F = cfg_.flat_features();

  Mat<Real> flat(B, F);
  if (cache != nullptr) {
    cache->examples.assign(batch.size(), {});
    cache->subjects = batch.subjects;
  }
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    Mat<Real> a = conv_input(*batch.inputs[bi], batch.subjects[bi]);
    if (cache != nullptr) cache->examples[bi].input = a;
    for (int l = 0; l < L; ++l) {
      Mat<Real> z = dilated_conv1d_forward(a, conv_weight(l), as_vec(conv_bias(l)), cfg_.kernel_size, 1 << l);
      Mat<Real> act = cfg_.layer_activated(l) ? activate(z, cfg_.activation) : z;
      Mat<Real> mask;
      if (train) {
        mask = dropout_mask<Real>(act.rows(), act.cols(), cfg_.dropout, *rng);
        act.array() *= mask.array();
      }
      if (cache != nullptr) {
        cache->examples[bi].pre.push_back(std::move(z));
        cache->examples[bi].post.push_back(act);
        cache->examples[bi].mask.push_back(std::move(mask));
      }
      a = std::move(act);
    }
    const Mat<Real> pooled = temporal_downsample(a, rf, cfg_.downsample);
    flat.row(b) = Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(pooled.data(), F);
  }

  Mat<Real> u = flat;
  Mat<Real> flat_mask;
  if (train) {
    flat_mask = dropout_mask<Real>(B, F, cfg_.dropout, *rng);
    u.array() *= flat_mask.array();
  }
  Mat<Real> hidden_pre = u * fc_weight(0).transpose();
  hidden_pre.rowwise() += as_vec(fc_bias(0)).transpose();
  Mat<Real> hidden = cfg_.layer_activated(L) ? activate(hidden_pre, cfg_.activation) : hidden_pre;
  Mat<Real> hidden_mask;
  if (train) {
    hidden_mask = dropout_mask<Real>(hidden.rows(), hidden.cols(), cfg_.dropout, *rng);
    hidden.array() *= hidden_mask.array();
  }
  Mat<Real> logits = hidden * fc_weight(1).transpose();
  logits.rowwise() += as_vec(fc_bias(1)).transpose();

  if (cache != nullptr) {
    cache->flat = std::move(flat);
    cache->flat_mask = std::move(flat_mask);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
    cache->hidden_mask = std::move(hidden_mask);
  }
  return logits;
}

template <class Real>
GradientSet<Real> WavenetClassifier<Real>::backward(const ForwardCache<Real>& cache, const Mat<Real>& dlogits) const {
  const int L = cfg_.n_conv_layers;
  const int rf = cfg_.receptive_field();
  const int H = cfg_.hidden_channels;
  const int P = cfg_.pooled_length();
  const int E = cfg_.embedding_size;
  auto g = GradientSet<Real>::zeros_like(params_);

  // dense head
  g.arrays[fc_index(1)].noalias() = dlogits.transpose() * cache.hidden;
  g.arrays[fc_index(1) + 1] = dlogits.colwise().sum().transpose();
  Mat<Real> d_hidden = dlogits * fc_weight(1);
  if (cache.hidden_mask.size() > 0) d_hidden.array() *= cache.hidden_mask.array();
  if (cfg_.layer_activated(L)) d_hidden.array() *= activation_derivative(cache.hidden_pre).array();
  Mat<Real> u = cache.flat;
  if (cache.flat_mask.size() > 0) u.array() *= cache.flat_mask.array();
  g.arrays[fc_index(0)].noalias() = d_hidden.transpose() * u;
  g.arrays[fc_index(0) + 1] = d_hidden.colwise().sum().transpose();
  Mat<Real> d_flat = d_hidden * fc_weight(0);
  if (cache.flat_mask.size() > 0) d_flat.array() *= cache.flat_mask.array();

  // conv block, one example at a time
  Vec<Real> d_bias(H);
  for (std::size_t b = 0; b < cache.examples.size(); ++b) {
    const auto& ex = cache.examples[b];
    const Mat<Real> d_pooled = Eigen::Map<const Mat<Real>>(d_flat.row(static_cast<Eigen::Index>(b)).data(), H, P);
    Mat<Real> d_act = temporal_downsample_backward(d_pooled, rf, cfg_.downsample, cfg_.n_timesteps);
    for (int l = L - 1; l >= 0; --l) {
      const auto li = static_cast<std::size_t>(l);
      if (ex.mask[li].size() > 0) d_act.array() *= ex.mask[li].array();
      if (cfg_.layer_activated(l)) d_act.array() *= activation_derivative(ex.pre[li]).array();
      const Mat<Real>& prev = l > 0 ? ex.post[li - 1] : ex.input;
      const bool need_dx = l > 0 || E > 0;
      Mat<Real> d_prev;
      d_bias.setZero();
      dilated_conv1d_backward(prev, d_act, conv_weight(l), cfg_.kernel_size, 1 << l, g.arrays[2 * li], d_bias,
                              need_dx ? &d_prev : nullptr);
      g.arrays[2 * li + 1] += d_bias;
      d_act = std::move(d_prev);
    }
    if (E > 0) {
      const int s = cache.subjects[b];
      g.arrays[embedding_index()].row(s) += d_act.bottomRows(E).rowwise().sum().transpose();
    }
  }
  return g;
}

template <class Real>
std::vector<int> WavenetClassifier<Real>::predict(const Batch<Real>& batch) const {
  const Mat<Real> logits = forward(batch, Mode::eval);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index b = 0; b < logits.rows(); ++b) {
    Eigen::Index arg = 0;
    logits.row(b).maxCoeff(&arg);
    out[static_cast<std::size_t>(b)] = static_cast<int>(arg);
  }
  return out;
}

template <class Real>
std::vector<Mat<Real>> WavenetClassifier<Real>::conv_activations(const Mat<Real>& x, int subject,
                                                                 int last_layer) const {
  if (last_layer < 0 || last_layer >= cfg_.n_conv_layers)
    throw std::out_of_range("conv layer " + std::to_string(last_layer) + " outside [0, " +
                            std::to_string(cfg_.n_conv_layers) + ")");
  std::vector<Mat<Real>> out;
  Mat<Real> a = conv_input(x, subject);
  for (int l = 0; l <= last_layer; ++l) {
    Mat<Real> z = dilated_conv1d_forward(a, conv_weight(l), as_vec(conv_bias(l)), cfg_.kernel_size, 1 << l);
    a = cfg_.layer_activated(l) ? activate(z, cfg_.activation) : std::move(z);
    out.push_back(a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam

template <class Real>
AdamState<Real> make_adam_state(const std::vector<Mat<Real>>& params) {
  return {GradientSet<Real>::zeros_like(params), GradientSet<Real>::zeros_like(params), 0};
}

template <class Real>
void adam_step(std::vector<Mat<Real>>& params, const GradientSet<Real>& grads, AdamState<Real>& state,
               const AdamOptions& opt) {
  if (grads.arrays.size() != params.size() || state.m.arrays.size() != params.size())
    throw std::invalid_argument("adam: parameter/gradient count mismatch");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Real b1 = static_cast<Real>(opt.beta1);
  const Real b2 = static_cast<Real>(opt.beta2);
  const Real c1 = static_cast<Real>(1.0 / (1.0 - std::pow(opt.beta1, t)));
  const Real c2 = static_cast<Real>(1.0 / (1.0 - std::pow(opt.beta2, t)));
  const Real lr = static_cast<Real>(opt.lr);
  const Real eps = static_cast<Real>(opt.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = state.m.arrays[i].array();
    auto v = state.v.arrays[i].array();
    const auto g = grads.arrays[i].array();
    m = b1 * m + (Real(1) - b1) * g;
    v = b2 * v + (Real(1) - b2) * g.square();
    params[i].array() -= lr * (m * c1) / ((v * c2).sqrt() + eps);
  }
}

template struct GradientSet<float>;
template struct GradientSet<double>;
template class WavenetClassifier<float>;
template class WavenetClassifier<double>;
template AdamState<float> make_adam_state(const std::vector<Mat<float>>&);
template AdamState<double> make_adam_state(const std::vector<Mat<double>>&);
template void adam_step(std::vector<Mat<float>>&, const GradientSet<float>&, AdamState<float>&, const AdamOptions&);
template void adam_step(std::vector<Mat<double>>&, const GradientSet<double>&, AdamState<double>&, const AdamOptions&);

}  // namespace gdec
