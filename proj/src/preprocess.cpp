#include "groupdecode/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace gdec {

// ---------------------------------------------------------------------------
// Splits

std::vector<SplitPlan> make_kfold_splits(const EpochedDataset& ds, int k, std::uint64_t seed) {
  const int n = ds.trials_per_class();
  if (k < 2) throw std::invalid_argument("k-fold split needs k >= 2");
  if (n < k)
    throw std::invalid_argument("trials_per_class=" + std::to_string(n) + " is too small for " + std::to_string(k) +
                                "-fold splitting");
  std::vector<SplitPlan> plans(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    plans[static_cast<std::size_t>(f)].fold_id = f;
    plans[static_cast<std::size_t>(f)].by_subject.assign(static_cast<std::size_t>(ds.n_subjects()),
                                                         std::vector<ClassSplit>(static_cast<std::size_t>(ds.n_classes)));
  }
  for (int s = 0; s < ds.n_subjects(); ++s) {
    for (int c = 0; c < ds.n_classes; ++c) {
      std::vector<int> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng = make_rng(seed, 10, s, c);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (int f = 0; f < k; ++f) {
        const int lo = f * n / k;
        const int hi = (f + 1) * n / k;
        auto& split = plans[static_cast<std::size_t>(f)].by_subject[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
        for (int i = 0; i < n; ++i) {
          const int trial = perm[static_cast<std::size_t>(i)];
          (i >= lo && i < hi ? split.val : split.train).push_back(trial);
        }
      }
    }
  }
  return plans;
}

SplitPlan make_splits(const EpochedDataset& ds, std::uint64_t seed) {
  const int n = ds.trials_per_class();
  if (n < 5)
    throw std::invalid_argument("trials_per_class=" + std::to_string(n) + " is too small for a 4:1 split");
  SplitPlan plan = make_kfold_splits(ds, 5, seed).front();
  plan.fold_id = -1;
  return plan;
}

SplitPlan subsample_training(const SplitPlan& plan, std::size_t subject, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("training ratio must lie in [0, 1]");
  SplitPlan out = plan;
  for (auto& split : out.by_subject.at(subject)) {
    const auto keep = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(split.train.size())));
    split.train.resize(keep);
  }
  return out;
}

nlohmann::json to_json(const SplitPlan& plan) {
  nlohmann::json j;
  j["fold_id"] = plan.fold_id;
  j["subjects"] = nlohmann::json::array();
  for (const auto& sub : plan.by_subject) {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& split : sub) classes.push_back({{"train", split.train}, {"val", split.val}});
    j["subjects"].push_back(std::move(classes));
  }
  return j;
}

SplitPlan split_plan_from_json(const nlohmann::json& j) {
  SplitPlan plan;
  plan.fold_id = j.at("fold_id").get<int>();
  for (const auto& classes : j.at("subjects")) {
    std::vector<ClassSplit> sub;
    for (const auto& split : classes)
      sub.push_back({split.at("train").get<std::vector<int>>(), split.at("val").get<std::vector<int>>()});
    plan.by_subject.push_back(std::move(sub));
  }
  return plan;
}

std::vector<const Trial*> training_trials(const EpochedDataset& ds, const SplitPlan& plan, std::size_t subject) {
  std::vector<const Trial*> out;
  const auto& sub = ds.subjects.at(subject);
  for (std::size_t c = 0; c < sub.by_class.size(); ++c)
    for (int i : plan.at(subject, c).train) out.push_back(&sub.by_class[c].at(static_cast<std::size_t>(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Channel statistics

namespace {

void require_same_channels(const std::vector<const Trial*>& trials, const std::string& label) {
  if (trials.empty()) throw std::invalid_argument("no trials to fit on for " + label);
  for (const Trial* t : trials)
    if (t->rows() != trials.front()->rows())
      throw std::invalid_argument("inconsistent channel counts in " + label);
}

Vec<double> channel_means(const std::vector<const Trial*>& trials, double& n_samples) {
  const Eigen::Index C = trials.front()->rows();
  Vec<double> sum = Vec<double>::Zero(C);
  n_samples = 0.0;
  for (const Trial* t : trials) {
    sum += t->cast<double>().rowwise().sum();
    n_samples += static_cast<double>(t->cols());
  }
  return sum / n_samples;
}

}  // namespace

Mat<double> channel_covariance(const std::vector<const Trial*>& trials) {
  require_same_channels(trials, "covariance");
  double n = 0.0;
  const Vec<double> mean = channel_means(trials, n);
  const Eigen::Index C = mean.size();
  Mat<double> cov = Mat<double>::Zero(C, C);
  for (const Trial* t : trials) {
    const Mat<double> centered = t->cast<double>().colwise() - mean;
    cov.noalias() += centered * centered.transpose();
  }
  return cov / n;
}

ChannelScaler ChannelScaler::fit(const std::vector<const Trial*>& trials, const std::string& label) {
  require_same_channels(trials, label);
  double n = 0.0;
  ChannelScaler s;
  s.mean = channel_means(trials, n);
  Vec<double> sq = Vec<double>::Zero(s.mean.size());
  for (const Trial* t : trials) sq += (t->cast<double>().colwise() - s.mean).array().square().rowwise().sum().matrix();
  const Vec<double> var = sq / n;
  s.scale.resize(var.size());
  for (Eigen::Index ch = 0; ch < var.size(); ++ch) {
    const double m = s.mean(ch);
    if (!(var(ch) > 1e-24 + 1e-12 * m * m))
      throw std::invalid_argument("zero-variance channel " + std::to_string(ch) + " in " + label);
    s.scale(ch) = std::sqrt(var(ch));
  }
  return s;
}

Mat<double> ChannelScaler::transform(const Mat<double>& x) const {
  if (x.rows() != mean.size()) throw std::invalid_argument("scaler channel count mismatch");
  return ((x.colwise() - mean).array().colwise() / scale.array()).matrix();
}

Trial ChannelScaler::apply(const Trial& x) const { return transform(x.cast<double>()).cast<float>(); }

WhiteningTransform WhiteningTransform::fit(const std::vector<const Trial*>& trials, const std::string& label) {
  require_same_channels(trials, label);
  const Eigen::Index C = trials.front()->rows();
  double n = 0.0;
  const Vec<double> mean = channel_means(trials, n);
  if (n < static_cast<double>(C + 1))
    throw std::invalid_argument("whitening " + label + " needs at least " + std::to_string(C + 1) +
                                " pooled samples, got " + std::to_string(static_cast<long>(n)));
  const Mat<double> cov = channel_covariance(trials);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed for " + label);
  const Eigen::VectorXd values = eig.eigenvalues();  // ascending
  const double largest = values(C - 1);
  if (!(largest > 0.0) || values(0) <= 1e-10 * largest)
    throw std::invalid_argument("rank-deficient channel covariance in " + label);

  WhiteningTransform w;
  w.mean = mean;
  w.projection.resize(C, C);
  // components ordered by decreasing variance
  for (Eigen::Index r = 0; r < C; ++r) {
    const Eigen::Index src = C - 1 - r;
    w.projection.row(r) = eig.eigenvectors().col(src).transpose() / std::sqrt(values(src));
  }
  return w;
}

Mat<double> WhiteningTransform::transform(const Mat<double>& x) const {
  if (x.rows() != mean.size()) throw std::invalid_argument("whitening channel count mismatch");
  return projection * (x.colwise() - mean);
}

Trial WhiteningTransform::apply(const Trial& x) const { return transform(x.cast<double>()).cast<float>(); }

namespace {

nlohmann::json vec_json(const Vec<double>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec<double> json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec<double>>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json to_json(const ChannelScaler& s) { return {{"mean", vec_json(s.mean)}, {"scale", vec_json(s.scale)}}; }

nlohmann::json to_json(const WhiteningTransform& w) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < w.projection.rows(); ++r) rows.push_back(vec_json(w.projection.row(r).transpose()));
  return {{"mean", vec_json(w.mean)}, {"projection", rows}};
}

ChannelScaler channel_scaler_from_json(const nlohmann::json& j) {
  ChannelScaler s;
  s.mean = json_vec(j.at("mean"));
  s.scale = json_vec(j.at("scale"));
  if (s.mean.size() != s.scale.size()) throw std::invalid_argument("scaler mean/scale length mismatch");
  return s;
}

WhiteningTransform whitening_from_json(const nlohmann::json& j) {
  WhiteningTransform w;
  w.mean = json_vec(j.at("mean"));
  const auto& rows = j.at("projection");
  w.projection.resize(static_cast<Eigen::Index>(rows.size()), w.mean.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Vec<double> row = json_vec(rows[r]);
    if (row.size() != w.mean.size()) throw std::invalid_argument("whitening projection row length mismatch");
    w.projection.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return w;
}

// ---------------------------------------------------------------------------
// Per-subject pipelines

Preprocessing preprocessing_from_string(const std::string& s) {
  if (s == "none") return Preprocessing::none;
  if (s == "standardize") return Preprocessing::standardize;
  if (s == "whiten") return Preprocessing::whiten;
  throw std::invalid_argument("unknown preprocessing '" + s + "' (expected none|standardize|whiten)");
}

std::string to_string(Preprocessing p) {
  switch (p) {
    case Preprocessing::none: return "none";
    case Preprocessing::standardize: return "standardize";
    case Preprocessing::whiten: return "whiten";
  }
  return "none";
}

SubjectTransforms fit_transforms(const EpochedDataset& ds, const SplitPlan& plan, Preprocessing kind) {
  SubjectTransforms t;
  t.kind = kind;
  if (plan.by_subject.size() != ds.subjects.size())
    throw std::invalid_argument("split plan covers " + std::to_string(plan.by_subject.size()) + " subjects, dataset has " +
                                std::to_string(ds.subjects.size()));
  for (std::size_t s = 0; s < ds.subjects.size(); ++s) {
    const auto trials = training_trials(ds, plan, s);
    const std::string label = "subject " + ds.subjects[s].id;
    if (kind == Preprocessing::standardize) t.scalers.push_back(ChannelScaler::fit(trials, label));
    if (kind == Preprocessing::whiten) t.whiteners.push_back(WhiteningTransform::fit(trials, label));
  }
  return t;
}

EpochedDataset SubjectTransforms::apply(const EpochedDataset& ds) const {
  if (kind == Preprocessing::none) return ds;
  EpochedDataset out = ds;
  for (std::size_t s = 0; s < out.subjects.size(); ++s) {
    for (auto& cls : out.subjects[s].by_class) {
      for (auto& trial : cls) {
        trial = kind == Preprocessing::standardize ? scalers.at(s).apply(trial) : whiteners.at(s).apply(trial);
      }
    }
  }
  return out;
}

nlohmann::json to_json(const SubjectTransforms& t) {
  nlohmann::json j;
  j["kind"] = to_string(t.kind);
  j["subjects"] = nlohmann::json::array();
  if (t.kind == Preprocessing::standardize)
    for (const auto& s : t.scalers) j["subjects"].push_back(to_json(s));
  if (t.kind == Preprocessing::whiten)
    for (const auto& w : t.whiteners) j["subjects"].push_back(to_json(w));
  return j;
}

SubjectTransforms transforms_from_json(const nlohmann::json& j) {
  SubjectTransforms t;
  t.kind = preprocessing_from_string(j.at("kind").get<std::string>());
  for (const auto& entry : j.at("subjects")) {
    if (t.kind == Preprocessing::standardize) t.scalers.push_back(channel_scaler_from_json(entry));
    if (t.kind == Preprocessing::whiten) t.whiteners.push_back(whitening_from_json(entry));
  }
  return t;
}

EpochedDataset standardize_channels(const EpochedDataset& ds, const SplitPlan& plan) {
  return fit_transforms(ds, plan, Preprocessing::standardize).apply(ds);
}

}  // namespace gdec
