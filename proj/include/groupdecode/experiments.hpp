#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "groupdecode/dataio.hpp"
#include "groupdecode/model.hpp"
#include "groupdecode/preprocess.hpp"
#include "groupdecode/stats.hpp"

namespace gdec {

using Model = WavenetClassifier<float>;

/// subject: one model per subject; group: one shared model; group_emb: shared model with subject embeddings.
enum class TrainMode { subject, group, group_emb };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainSpec {
  TrainMode mode = TrainMode::group_emb;
  bool linear = false;
  int epochs = 60;
  double lr = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 0;
  /// Initialize from this checkpoint instead of a fresh draw.
  std::optional<std::string> init_checkpoint;

  int n_conv_layers = 6;
  int kernel_size = 2;
  int hidden_channels = 16;
  int fc_hidden = 64;
  double dropout = 0.2;
  int embedding_size = 10;
  DownsampleMode downsample = DownsampleMode::mean;
  /// Unset picks standardize for group modes and whiten for subject mode.
  std::optional<Preprocessing> preprocessing;
  /// Record validation loss/accuracy every this many epochs (0: only after the last epoch).
  int eval_every = 0;
  /// Upper bound on worker threads for independent runs.
  int jobs = 1;

  Preprocessing resolved_preprocessing() const;
  void validate() const;

  /// Minutes-scale defaults for the synthetic desk dataset.
  static TrainSpec desk(TrainMode mode, bool linear = false);
  /// Published hyperparameters (epochs, lr, batch size, dropout, depth, widths).
  static TrainSpec paper(TrainMode mode, bool linear = false);
};

nlohmann::json to_json(const TrainSpec& s);
TrainSpec train_spec_from_json(const nlohmann::json& j);

/// Architecture for `spec` on `ds`; the embedding table always has one row per dataset subject.
ModelConfig model_config_for(const EpochedDataset& ds, const TrainSpec& spec);

/// Labelled examples referencing trials of a dataset.
struct ExampleSet {
  std::vector<const Trial*> inputs;
  std::vector<int> subjects;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

enum class SplitPart { train, val };

/// Examples of the listed subjects (all when empty) from one side of the split.
ExampleSet collect_examples(const EpochedDataset& ds, const SplitPlan& plan, SplitPart part,
                            const std::vector<int>& subjects = {});

struct Curves {
  std::vector<int> epoch;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
};

struct FitOptions {
  int epochs = 1;
  double lr = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 0;
  int eval_every = 0;
};

nlohmann::json to_json(const Curves& c);
Curves curves_from_json(const nlohmann::json& j);

/// Adam with epoch-shuffled minibatches; deterministic given options.seed.
Curves fit(Model& model, const ExampleSet& train, const ExampleSet* val, const FitOptions& options);

struct Evaluation {
  std::vector<int> predictions;
  std::vector<int> labels;
  double loss = 0.0;
  double accuracy = 0.0;
};

Evaluation evaluate(const Model& model, const ExampleSet& examples);

struct SubjectResult {
  std::string id;
  double accuracy = 0.0;
  std::vector<int> predictions;
  std::vector<int> labels;
};

struct ExperimentReport {
  std::string name;
  TrainSpec spec;
  std::string config_hash;
  std::vector<SubjectResult> subjects;
  double mean_accuracy = 0.0;
  /// One entry per trained model.
  std::vector<Curves> curves;
  /// Additional structured results (statistical tests, sweeps).
  nlohmann::json extra = nlohmann::json::object();

  std::vector<double> accuracies() const;
  const SubjectResult& subject(const std::string& id) const;
};

nlohmann::json to_json(const ExperimentReport& r);
ExperimentReport experiment_report_from_json(const nlohmann::json& j);
/// Per-subject table: subject,accuracy,n_val.
std::string subjects_csv(const ExperimentReport& r);

/// FNV-1a over the canonical JSON of the spec and dataset shape.
std::string config_hash(const EpochedDataset& ds, const TrainSpec& spec);

struct TrainResult {
  /// One model for group modes; one per trained subject (in `subjects` order) for subject mode.
  std::vector<Model> models;
  std::vector<int> subjects;
  ExperimentReport report;
};

/// Trains on an already preprocessed dataset. `subjects` restricts training and
/// evaluation to those dataset indices (all when empty).
TrainResult train(const EpochedDataset& ds, const SplitPlan& plan, const TrainSpec& spec,
                  const std::vector<int>& subjects = {});

/// Fits per-subject transforms on the training split and applies them.
struct PreparedData {
  EpochedDataset data;
  SubjectTransforms transforms;
};
PreparedData prepare(const EpochedDataset& raw, const SplitPlan& plan, Preprocessing kind);

/// Evaluates a group model on each listed subject's validation split.
std::vector<SubjectResult> evaluate_subjects(const Model& model, const EpochedDataset& ds, const SplitPlan& plan,
                                             const std::vector<int>& subjects);

struct FinetuneSpec {
  int epochs = 500;
  double lr = 1e-4;
  int batch_size = 59;
  std::uint64_t seed = 0;
  /// Redraw the subject's embedding row from N(0, 1/E) before finetuning.
  bool fresh_embedding = false;

  /// Same epoch budget as the desk subject preset.
  static FinetuneSpec desk();
  static FinetuneSpec paper();
};

nlohmann::json to_json(const FinetuneSpec& s);
FinetuneSpec finetune_spec_from_json(const nlohmann::json& j);

struct FinetuneResult {
  Model model;
  SubjectResult result;
  Curves curves;
};

/// Continues training a group model on one subject's training split. When the subject
/// has no embedding row, fresh_embedding extends the table; otherwise it is an error.
FinetuneResult finetune(const Model& group_model, const EpochedDataset& ds, const SplitPlan& plan, int subject,
                        const FinetuneSpec& spec);

enum class LosoVariant { group, group_emb, subject_scratch };
std::string to_string(LosoVariant v);
LosoVariant loso_variant_from_string(const std::string& s);

struct LosoCurve {
  std::string left_out;
  LosoVariant variant = LosoVariant::group_emb;
  std::vector<double> ratios;
  std::vector<double> accuracy;
};

/// Leave-one-subject-out sweep on a raw dataset. Group variants pre-train on the remaining
/// subjects and finetune on the first `ratio` fraction of the left-out subject's training trials;
/// subject_scratch trains only on that fraction. Ratio 0 is the zero-shot (or untrained) case.
LosoCurve loso_run(const EpochedDataset& raw, const SplitPlan& plan, int left_out, const std::vector<double>& ratios,
                   LosoVariant variant, const TrainSpec& spec, const FinetuneSpec& finetune_spec);

struct SubgroupCurve {
  std::vector<int> order;
  std::vector<int> n_subjects;
  /// Mean over all subjects with untrained subjects scored at chance.
  std::vector<double> all_subjects;
  /// Mean over the trained subjects only.
  std::vector<double> trained_subjects;
  /// per_subject[n-1][s]: accuracy of subject s for the n-subject model (chance if untrained).
  std::vector<std::vector<double>> per_subject;
};

/// Subject order drawn from order_seed; trains group_emb on the first n subjects for n = 1..S.
SubgroupCurve subgroup_scaling(const EpochedDataset& raw, const SplitPlan& plan, std::uint64_t order_seed,
                               const TrainSpec& spec);

struct KFoldResult {
  std::vector<double> fold_accuracy;
  double mean = 0.0;
  stats::Interval ci;
};

KFoldResult kfold_cv(const EpochedDataset& raw, const TrainSpec& spec, int k, std::uint64_t split_seed);

enum class AblationMode { zero, shuffle };
std::string to_string(AblationMode m);
AblationMode ablation_mode_from_string(const std::string& s);

struct AblationResult {
  AblationMode mode = AblationMode::zero;
  std::vector<int> permutation;
  std::vector<double> intact;
  std::vector<double> ablated;
  double mean_drop = 0.0;
  stats::TestResult test;
};

/// Evaluates with embedding rows zeroed, or reassigned by a random (or given) permutation.
AblationResult embedding_ablation(const Model& model, const EpochedDataset& ds, const SplitPlan& plan,
                                  AblationMode mode, std::uint64_t seed,
                                  const std::optional<std::vector<int>>& permutation = std::nullopt);

nlohmann::json to_json(const LosoCurve& c);
nlohmann::json to_json(const SubgroupCurve& c);
LosoCurve loso_curve_from_json(const nlohmann::json& j);
SubgroupCurve subgroup_curve_from_json(const nlohmann::json& j);
nlohmann::json to_json(const KFoldResult& r);
nlohmann::json to_json(const AblationResult& r);

}  // namespace gdec
