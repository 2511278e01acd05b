#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "groupdecode/dataio.hpp"

namespace gdec {

struct ClassSplit {
  std::vector<int> train;
  std::vector<int> val;

  bool operator==(const ClassSplit&) const = default;
};

/// Stratified train/validation indices per (subject, class).
struct SplitPlan {
  /// folds[s][c] for subject s and class c.
  std::vector<std::vector<ClassSplit>> by_subject;
  /// Fold number in k-fold mode, -1 for a single hold-out split.
  int fold_id = -1;

  const ClassSplit& at(std::size_t subject, std::size_t cls) const { return by_subject.at(subject).at(cls); }
  bool operator==(const SplitPlan&) const = default;
};

/// 4:1 stratified hold-out split; deterministic given seed.
SplitPlan make_splits(const EpochedDataset& ds, std::uint64_t seed);

/// k stratified folds; every trial lands in exactly one fold's validation set.
std::vector<SplitPlan> make_kfold_splits(const EpochedDataset& ds, int k, std::uint64_t seed);

/// Keeps only the first round(ratio * n) training trials of `subject` per class.
SplitPlan subsample_training(const SplitPlan& plan, std::size_t subject, double ratio);

nlohmann::json to_json(const SplitPlan& plan);
SplitPlan split_plan_from_json(const nlohmann::json& j);

/// Per-channel affine map x -> (x - mean) / scale.
struct ChannelScaler {
  Vec<double> mean;
  Vec<double> scale;

  /// Population statistics over the concatenated time courses of `trials`.
  /// Throws std::invalid_argument naming `label` and the channel when a variance is zero.
  static ChannelScaler fit(const std::vector<const Trial*>& trials, const std::string& label = "data");
  Trial apply(const Trial& x) const;
  Mat<double> transform(const Mat<double>& x) const;
};

/// PCA whitening keeping every component: x -> P (x - mean).
struct WhiteningTransform {
  Vec<double> mean;
  Mat<double> projection;

  /// Throws std::invalid_argument on a rank-deficient covariance or too few samples.
  static WhiteningTransform fit(const std::vector<const Trial*>& trials, const std::string& label = "data");
  Trial apply(const Trial& x) const;
  Mat<double> transform(const Mat<double>& x) const;
};

nlohmann::json to_json(const ChannelScaler& s);
nlohmann::json to_json(const WhiteningTransform& w);
ChannelScaler channel_scaler_from_json(const nlohmann::json& j);
WhiteningTransform whitening_from_json(const nlohmann::json& j);

enum class Preprocessing { none, standardize, whiten };

Preprocessing preprocessing_from_string(const std::string& s);
std::string to_string(Preprocessing p);

/// Fitted per-subject transforms; statistics come from the training split only.
struct SubjectTransforms {
  Preprocessing kind = Preprocessing::none;
  std::vector<ChannelScaler> scalers;
  std::vector<WhiteningTransform> whiteners;

  EpochedDataset apply(const EpochedDataset& ds) const;
};

SubjectTransforms fit_transforms(const EpochedDataset& ds, const SplitPlan& plan, Preprocessing kind);

nlohmann::json to_json(const SubjectTransforms& t);
SubjectTransforms transforms_from_json(const nlohmann::json& j);

/// Standardises each subject's channels with statistics from its training trials.
EpochedDataset standardize_channels(const EpochedDataset& ds, const SplitPlan& plan);

/// Empirical covariance of channels pooled across trials (population normalization).
Mat<double> channel_covariance(const std::vector<const Trial*>& trials);

/// Training trials of subject s as pointers into ds.
std::vector<const Trial*> training_trials(const EpochedDataset& ds, const SplitPlan& plan, std::size_t subject);

}  // namespace gdec
