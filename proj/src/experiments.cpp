#include "groupdecode/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "groupdecode/checkpoint.hpp"
#include "groupdecode/parallel.hpp"

namespace gdec {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::subject: return "subject";
    case TrainMode::group: return "group";
    case TrainMode::group_emb: return "group_emb";
  }
  return "group_emb";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "subject") return TrainMode::subject;
  if (s == "group") return TrainMode::group;
  if (s == "group_emb" || s == "group-emb") return TrainMode::group_emb;
  throw std::invalid_argument("unknown training mode '" + s + "' (expected subject, group or group_emb)");
}

Preprocessing TrainSpec::resolved_preprocessing() const {
  if (preprocessing) return *preprocessing;
  return mode == TrainMode::subject ? Preprocessing::whiten : Preprocessing::standardize;
}

void TrainSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid training spec: " + msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (n_conv_layers < 1) fail("n_conv_layers must be >= 1");
  if (kernel_size < 1) fail("kernel_size must be >= 1");
  if (hidden_channels < 1 || fc_hidden < 1) fail("layer widths must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (mode == TrainMode::group_emb && embedding_size < 1) fail("mode group_emb requires embedding_size > 0");
  if (embedding_size < 0) fail("embedding_size must be >= 0");
  if (eval_every < 0) fail("eval_every must be >= 0");
  if (jobs < 1) fail("jobs must be >= 1");
}

TrainSpec TrainSpec::desk(TrainMode mode, bool linear) {
  TrainSpec s;
  s.mode = mode;
  s.linear = linear;
  if (mode == TrainMode::subject) {
    s.n_conv_layers = 3;
    s.dropout = 0.5;
    s.batch_size = 32;
    s.epochs = 60;
  } else {
    s.n_conv_layers = 6;
    s.dropout = 0.2;
    s.batch_size = 64;
    s.epochs = 60;
  }
  // small desk models under-use the embedding at the published rate
  s.lr = 1e-2;
  s.hidden_channels = 16;
  s.fc_hidden = 64;
  s.embedding_size = 10;
  return s;
}

TrainSpec TrainSpec::paper(TrainMode mode, bool linear) {
  TrainSpec s;
  s.mode = mode;
  s.linear = linear;
  s.epochs = linear ? 500 : 2000;
  s.hidden_channels = 128;
  s.fc_hidden = 512;
  s.embedding_size = 10;
  if (mode == TrainMode::subject) {
    s.n_conv_layers = 3;
    s.dropout = 0.7;
    s.batch_size = 59;
    s.lr = 5e-5;
  } else {
    s.n_conv_layers = 6;
    s.dropout = 0.4;
    s.batch_size = 590;
    s.lr = 1e-4;
  }
  return s;
}

nlohmann::json to_json(const TrainSpec& s) {
  nlohmann::json j = {{"mode", to_string(s.mode)},
                      {"linear", s.linear},
                      {"epochs", s.epochs},
                      {"lr", s.lr},
                      {"batch_size", s.batch_size},
                      {"seed", s.seed},
                      {"init_checkpoint", s.init_checkpoint ? nlohmann::json(*s.init_checkpoint) : nlohmann::json()},
                      {"n_conv_layers", s.n_conv_layers},
                      {"kernel_size", s.kernel_size},
                      {"hidden_channels", s.hidden_channels},
                      {"fc_hidden", s.fc_hidden},
                      {"dropout", s.dropout},
                      {"embedding_size", s.embedding_size},
                      {"downsample", to_string(s.downsample)},
                      {"preprocessing", to_string(s.resolved_preprocessing())},
                      {"eval_every", s.eval_every}};
  return j;
}

TrainSpec train_spec_from_json(const nlohmann::json& j) {
  TrainSpec s;
  s.mode = train_mode_from_string(j.at("mode").get<std::string>());
  s.linear = j.value("linear", s.linear);
  s.epochs = j.value("epochs", s.epochs);
  s.lr = j.value("lr", s.lr);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  if (j.contains("init_checkpoint") && !j.at("init_checkpoint").is_null())
    s.init_checkpoint = j.at("init_checkpoint").get<std::string>();
  s.n_conv_layers = j.value("n_conv_layers", s.n_conv_layers);
  s.kernel_size = j.value("kernel_size", s.kernel_size);
  s.hidden_channels = j.value("hidden_channels", s.hidden_channels);
  s.fc_hidden = j.value("fc_hidden", s.fc_hidden);
  s.dropout = j.value("dropout", s.dropout);
  s.embedding_size = j.value("embedding_size", s.embedding_size);
  if (j.contains("downsample")) s.downsample = downsample_from_string(j.at("downsample").get<std::string>());
  if (j.contains("preprocessing")) s.preprocessing = preprocessing_from_string(j.at("preprocessing").get<std::string>());
  s.eval_every = j.value("eval_every", s.eval_every);
  s.validate();
  return s;
}

ModelConfig model_config_for(const EpochedDataset& ds, const TrainSpec& spec) {
  ModelConfig cfg;
  cfg.n_input_channels = ds.n_channels();
  cfg.n_classes = ds.n_classes;
  cfg.n_timesteps = ds.n_timesteps();
  cfg.n_conv_layers = spec.n_conv_layers;
  cfg.kernel_size = spec.kernel_size;
  cfg.hidden_channels = spec.hidden_channels;
  cfg.fc_hidden = spec.fc_hidden;
  cfg.dropout = spec.dropout;
  cfg.embedding_size = spec.mode == TrainMode::group_emb ? spec.embedding_size : 0;
  cfg.n_subjects = spec.mode == TrainMode::subject ? 1 : ds.n_subjects();
  cfg.activation = spec.linear ? Activation::identity : Activation::asinh;
  cfg.downsample = spec.downsample;
  cfg.validate();
  return cfg;
}

ExampleSet collect_examples(const EpochedDataset& ds, const SplitPlan& plan, SplitPart part,
                            const std::vector<int>& subjects) {
  if (plan.by_subject.size() != ds.subjects.size())
    throw std::invalid_argument("split plan covers " + std::to_string(plan.by_subject.size()) +
                                " subjects but the dataset has " + std::to_string(ds.subjects.size()));
  std::vector<int> which = subjects;
  if (which.empty()) {
    which.resize(ds.subjects.size());
    std::iota(which.begin(), which.end(), 0);
  }
  ExampleSet out;
  for (int s : which) {
    if (s < 0 || s >= ds.n_subjects()) throw std::out_of_range("subject index " + std::to_string(s) + " out of range");
    const auto& sub = ds.subjects[static_cast<std::size_t>(s)];
    for (int c = 0; c < ds.n_classes; ++c) {
      const auto& split = plan.at(static_cast<std::size_t>(s), static_cast<std::size_t>(c));
      for (int i : part == SplitPart::train ? split.train : split.val) {
        out.inputs.push_back(&sub.by_class.at(static_cast<std::size_t>(c)).at(static_cast<std::size_t>(i)));
        out.subjects.push_back(s);
        out.labels.push_back(c);
      }
    }
  }
  return out;
}

namespace {

Batch<float> make_batch(const ExampleSet& set, const std::vector<std::size_t>& order, std::size_t begin,
                        std::size_t end, std::vector<int>& labels, bool subject_rows) {
  Batch<float> batch;
  labels.clear();
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t e = order[i];
    batch.inputs.push_back(set.inputs[e]);
    batch.subjects.push_back(subject_rows ? set.subjects[e] : 0);
    labels.push_back(set.labels[e]);
  }
  return batch;
}

bool uses_subject_rows(const Model& model) { return model.has_embeddings(); }

constexpr std::size_t kEvalBatch = 128;

}  // namespace

Evaluation evaluate(const Model& model, const ExampleSet& examples) {
  if (examples.size() == 0) throw std::invalid_argument("evaluate: empty example set");
  Evaluation ev;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;
  double loss_sum = 0.0;
  for (std::size_t b = 0; b < examples.size(); b += kEvalBatch) {
    const std::size_t e = std::min(examples.size(), b + kEvalBatch);
    const auto batch = make_batch(examples, order, b, e, labels, uses_subject_rows(model));
    const Mat<float> logits = model.forward(batch, Mode::eval);
    loss_sum += cross_entropy<float>(logits, labels).loss * static_cast<double>(e - b);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      ev.predictions.push_back(static_cast<int>(arg));
    }
  }
  ev.labels = examples.labels;
  ev.loss = loss_sum / static_cast<double>(examples.size());
  ev.accuracy = stats::accuracy(ev.predictions, ev.labels);
  return ev;
}

Curves fit(Model& model, const ExampleSet& train, const ExampleSet* val, const FitOptions& options) {
  if (train.size() == 0) throw std::invalid_argument("empty training split");
  if (options.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (static_cast<std::size_t>(options.batch_size) > train.size())
    throw std::invalid_argument("batch size " + std::to_string(options.batch_size) + " exceeds the " +
                                std::to_string(train.size()) + " training trials");
  for (const Trial* x : train.inputs) {
    if (x->rows() != model.config().n_input_channels || x->cols() != model.config().n_timesteps)
      throw std::invalid_argument("trial shape " + std::to_string(x->rows()) + "x" + std::to_string(x->cols()) +
                                  " does not match the model input " +
                                  std::to_string(model.config().n_input_channels) + "x" +
                                  std::to_string(model.config().n_timesteps));
  }
  const bool rows = uses_subject_rows(model);
  if (rows) {
    for (int s : train.subjects)
      if (s >= model.config().n_subjects)
        throw std::invalid_argument("subject " + std::to_string(s) + " has no row in the embedding table");
  }

  Rng shuffle_rng = make_rng(options.seed, 300);
  Rng dropout_rng = make_rng(options.seed, 301);
  AdamState<float> state = make_adam_state(model.parameters());
  const AdamOptions adam{.lr = options.lr};
  Curves curves;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;
  const auto bs = static_cast<std::size_t>(options.batch_size);

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += bs) {
      const std::size_t e = std::min(order.size(), b + bs);
      const auto batch = make_batch(train, order, b, e, labels, rows);
      ForwardCache<float> cache;
      const Mat<float> logits = model.forward(batch, Mode::train, &dropout_rng, &cache);
      const auto loss = cross_entropy<float>(logits, labels);
      loss_sum += loss.loss * static_cast<double>(e - b);
      const auto grads = model.backward(cache, loss.dlogits);
      adam_step(model.parameters(), grads, state, adam);
    }
    const bool record = options.eval_every > 0 ? (epoch % options.eval_every == 0 || epoch == options.epochs)
                                               : epoch == options.epochs;
    if (record) {
      curves.epoch.push_back(epoch);
      curves.train_loss.push_back(loss_sum / static_cast<double>(train.size()));
      if (val != nullptr && val->size() > 0) {
        const auto ev = evaluate(model, *val);
        curves.val_loss.push_back(ev.loss);
        curves.val_accuracy.push_back(ev.accuracy);
      }
    }
  }
  return curves;
}

std::vector<double> ExperimentReport::accuracies() const {
  std::vector<double> out;
  for (const auto& s : subjects) out.push_back(s.accuracy);
  return out;
}

const SubjectResult& ExperimentReport::subject(const std::string& id) const {
  for (const auto& s : subjects)
    if (s.id == id) return s;
  throw std::out_of_range("report has no subject '" + id + "'");
}

nlohmann::json to_json(const Curves& c) {
  return {{"epoch", c.epoch}, {"train_loss", c.train_loss}, {"val_loss", c.val_loss}, {"val_accuracy", c.val_accuracy}};
}

Curves curves_from_json(const nlohmann::json& j) {
  Curves c;
  c.epoch = j.at("epoch").get<std::vector<int>>();
  c.train_loss = j.at("train_loss").get<std::vector<double>>();
  c.val_loss = j.at("val_loss").get<std::vector<double>>();
  c.val_accuracy = j.at("val_accuracy").get<std::vector<double>>();
  return c;
}

namespace {

double mean_of(const std::vector<SubjectResult>& subjects) {
  if (subjects.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : subjects) sum += s.accuracy;
  return sum / static_cast<double>(subjects.size());
}

}  // namespace

nlohmann::json to_json(const ExperimentReport& r) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : r.subjects)
    subjects.push_back(
        {{"id", s.id}, {"accuracy", s.accuracy}, {"predictions", s.predictions}, {"labels", s.labels}});
  nlohmann::json curves = nlohmann::json::array();
  for (const auto& c : r.curves) curves.push_back(to_json(c));
  return {{"name", r.name},
          {"spec", to_json(r.spec)},
          {"seed", r.spec.seed},
          {"config_hash", r.config_hash},
          {"mean_accuracy", r.mean_accuracy},
          {"subjects", subjects},
          {"curves", curves},
          {"extra", r.extra}};
}

ExperimentReport experiment_report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.name = j.at("name").get<std::string>();
  r.spec = train_spec_from_json(j.at("spec"));
  r.config_hash = j.at("config_hash").get<std::string>();
  r.mean_accuracy = j.at("mean_accuracy").get<double>();
  for (const auto& s : j.at("subjects")) {
    SubjectResult sr;
    sr.id = s.at("id").get<std::string>();
    sr.accuracy = s.at("accuracy").get<double>();
    sr.predictions = s.at("predictions").get<std::vector<int>>();
    sr.labels = s.at("labels").get<std::vector<int>>();
    r.subjects.push_back(std::move(sr));
  }
  for (const auto& c : j.at("curves")) r.curves.push_back(curves_from_json(c));
  r.extra = j.value("extra", nlohmann::json::object());
  return r;
}

std::string subjects_csv(const ExperimentReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "subject,accuracy,n_val\n";
  for (const auto& s : r.subjects) out << s.id << ',' << s.accuracy << ',' << s.labels.size() << '\n';
  return out.str();
}

std::string config_hash(const EpochedDataset& ds, const TrainSpec& spec) {
  const nlohmann::json j = {{"spec", to_json(spec)},
                            {"dataset",
                             {{"subjects", ds.n_subjects()},
                              {"classes", ds.n_classes},
                              {"channels", ds.n_channels()},
                              {"timesteps", ds.n_timesteps()},
                              {"trials_per_class", ds.trials_per_class()}}}};
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << h;
  return out.str();
}

PreparedData prepare(const EpochedDataset& raw, const SplitPlan& plan, Preprocessing kind) {
  PreparedData p;
  p.transforms = fit_transforms(raw, plan, kind);
  p.data = p.transforms.apply(raw);
  return p;
}

std::vector<SubjectResult> evaluate_subjects(const Model& model, const EpochedDataset& ds, const SplitPlan& plan,
                                             const std::vector<int>& subjects) {
  std::vector<SubjectResult> out;
  for (int s : subjects) {
    const auto examples = collect_examples(ds, plan, SplitPart::val, {s});
    if (examples.size() == 0)
      throw std::invalid_argument("empty validation split for subject " + ds.subjects[static_cast<std::size_t>(s)].id);
    const auto ev = evaluate(model, examples);
    out.push_back({ds.subjects[static_cast<std::size_t>(s)].id, ev.accuracy, ev.predictions, ev.labels});
  }
  return out;
}

namespace {

std::vector<int> all_or(const EpochedDataset& ds, const std::vector<int>& subjects) {
  if (!subjects.empty()) return subjects;
  std::vector<int> all(static_cast<std::size_t>(ds.n_subjects()));
  std::iota(all.begin(), all.end(), 0);
  return all;
}

Model initial_model(const ModelConfig& cfg, const TrainSpec& spec, std::uint64_t seed) {
  if (spec.init_checkpoint) return load_checkpoint(*spec.init_checkpoint, cfg);
  return Model(cfg, seed);
}

FitOptions fit_options(const TrainSpec& spec, std::uint64_t seed) {
  return {spec.epochs, spec.lr, spec.batch_size, seed, spec.eval_every};
}

}  // namespace

TrainResult train(const EpochedDataset& ds, const SplitPlan& plan, const TrainSpec& spec,
                  const std::vector<int>& subjects) {
  spec.validate();
  const auto which = all_or(ds, subjects);
  TrainResult result;
  result.subjects = which;
  result.report.name = to_string(spec.mode) + (spec.linear ? "_linear" : "");
  result.report.spec = spec;
  result.report.config_hash = config_hash(ds, spec);
  const ModelConfig cfg = model_config_for(ds, spec);

  if (spec.mode == TrainMode::subject) {
    const int n = static_cast<int>(which.size());
    std::vector<std::optional<Model>> models(which.size());
    std::vector<Curves> curves(which.size());
    parallel_for(n, spec.jobs, [&](int i) {
      const int s = which[static_cast<std::size_t>(i)];
      const auto train_set = collect_examples(ds, plan, SplitPart::train, {s});
      const auto val_set = collect_examples(ds, plan, SplitPart::val, {s});
      Model m = initial_model(cfg, spec, derive_seed(spec.seed, 1, s));
      curves[static_cast<std::size_t>(i)] = fit(m, train_set, &val_set, fit_options(spec, derive_seed(spec.seed, 2, s)));
      models[static_cast<std::size_t>(i)] = std::move(m);
    });
    for (std::size_t i = 0; i < which.size(); ++i) {
      result.models.push_back(std::move(*models[i]));
      auto r = evaluate_subjects(result.models.back(), ds, plan, {which[i]});
      result.report.subjects.push_back(std::move(r.front()));
    }
    result.report.curves = std::move(curves);
  } else {
    const auto train_set = collect_examples(ds, plan, SplitPart::train, which);
    const auto val_set = collect_examples(ds, plan, SplitPart::val, which);
    Model m = initial_model(cfg, spec, derive_seed(spec.seed, 1));
    result.report.curves.push_back(fit(m, train_set, &val_set, fit_options(spec, derive_seed(spec.seed, 2))));
    result.report.subjects = evaluate_subjects(m, ds, plan, which);
    result.models.push_back(std::move(m));
  }
  result.report.mean_accuracy = mean_of(result.report.subjects);
  return result;
}

FinetuneSpec FinetuneSpec::desk() {
  FinetuneSpec s;
  s.epochs = 60;
  s.lr = 1e-3;
  s.batch_size = 32;
  return s;
}

FinetuneSpec FinetuneSpec::paper() {
  FinetuneSpec s;
  s.epochs = 500;
  s.lr = 1e-4;
  s.batch_size = 59;
  return s;
}

nlohmann::json to_json(const FinetuneSpec& s) {
  return {{"epochs", s.epochs},
          {"lr", s.lr},
          {"batch_size", s.batch_size},
          {"seed", s.seed},
          {"fresh_embedding", s.fresh_embedding}};
}

FinetuneSpec finetune_spec_from_json(const nlohmann::json& j) {
  FinetuneSpec s;
  s.epochs = j.value("epochs", s.epochs);
  s.lr = j.value("lr", s.lr);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  s.fresh_embedding = j.value("fresh_embedding", s.fresh_embedding);
  return s;
}

namespace {

/// Copy of `model` whose embedding table has at least `rows` rows; new rows are zero.
Model with_embedding_rows(const Model& model, int rows) {
  ModelConfig cfg = model.config();
  if (rows <= cfg.n_subjects) return model;
  cfg.n_subjects = rows;
  Model out(cfg);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const auto& p = model.parameters()[i];
    out.parameters()[i].topLeftCorner(p.rows(), p.cols()) = p;
  }
  return out;
}

void redraw_embedding_row(Model& model, int row, std::uint64_t seed) {
  Rng rng = make_rng(seed, 400, row);
  const int E = model.config().embedding_size;
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(E)));
  for (int e = 0; e < E; ++e) model.embeddings()(row, e) = static_cast<float>(normal(rng));
}

}  // namespace

FinetuneResult finetune(const Model& group_model, const EpochedDataset& ds, const SplitPlan& plan, int subject,
                        const FinetuneSpec& spec) {
  if (subject < 0 || subject >= ds.n_subjects())
    throw std::out_of_range("finetune: subject index " + std::to_string(subject) + " out of range");
  if (spec.epochs < 0) throw std::invalid_argument("finetune: epochs must be >= 0");
  const auto& cfg = group_model.config();
  if (cfg.n_input_channels != ds.n_channels() || cfg.n_timesteps != ds.n_timesteps() || cfg.n_classes != ds.n_classes)
    throw std::invalid_argument("finetune: checkpoint config does not match the dataset shape");
  Model model = group_model;
  if (model.has_embeddings()) {
    if (subject >= cfg.n_subjects) {
      if (!spec.fresh_embedding)
        throw std::invalid_argument("subject " + ds.subjects[static_cast<std::size_t>(subject)].id +
                                    " is absent from the checkpoint's embedding table and no fresh-row policy was given");
      model = with_embedding_rows(model, subject + 1);
    }
    if (spec.fresh_embedding) redraw_embedding_row(model, subject, spec.seed);
  }
  const auto train_set = collect_examples(ds, plan, SplitPart::train, {subject});
  const auto val_set = collect_examples(ds, plan, SplitPart::val, {subject});
  FinetuneResult out{std::move(model), {}, {}};
  if (spec.epochs > 0)
    out.curves = fit(out.model, train_set, &val_set, {spec.epochs, spec.lr, spec.batch_size, derive_seed(spec.seed, 3, subject), 0});
  out.result = evaluate_subjects(out.model, ds, plan, {subject}).front();
  return out;
}

std::string to_string(LosoVariant v) {
  switch (v) {
    case LosoVariant::group: return "group";
    case LosoVariant::group_emb: return "group_emb";
    case LosoVariant::subject_scratch: return "subject_scratch";
  }
  return "group_emb";
}

LosoVariant loso_variant_from_string(const std::string& s) {
  if (s == "group") return LosoVariant::group;
  if (s == "group_emb" || s == "group-emb") return LosoVariant::group_emb;
  if (s == "subject_scratch" || s == "subject-scratch" || s == "subject") return LosoVariant::subject_scratch;
  throw std::invalid_argument("unknown LOSO variant '" + s + "' (expected group, group_emb or subject_scratch)");
}

LosoCurve loso_run(const EpochedDataset& raw, const SplitPlan& plan, int left_out, const std::vector<double>& ratios,
                   LosoVariant variant, const TrainSpec& spec, const FinetuneSpec& finetune_spec) {
  if (raw.n_subjects() < 2) throw std::invalid_argument("LOSO needs at least 2 subjects");
  if (left_out < 0 || left_out >= raw.n_subjects()) throw std::out_of_range("LOSO: left-out subject out of range");
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("LOSO ratio " + std::to_string(r) + " outside [0, 1]");

  LosoCurve curve;
  curve.left_out = raw.subjects[static_cast<std::size_t>(left_out)].id;
  curve.variant = variant;
  curve.ratios = ratios;

  TrainSpec base = spec;
  base.mode = variant == LosoVariant::group_emb   ? TrainMode::group_emb
              : variant == LosoVariant::group     ? TrainMode::group
                                                  : TrainMode::subject;
  base.preprocessing = spec.preprocessing;
  base.init_checkpoint.reset();
  const auto prepared = prepare(raw, plan, base.resolved_preprocessing());
  const auto& ds = prepared.data;

  auto finetune_budget = [&](const SplitPlan& sub_plan) {
    FinetuneSpec f = finetune_spec;
    const auto n = collect_examples(ds, sub_plan, SplitPart::train, {left_out}).size();
    f.batch_size = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(f.batch_size), n));
    f.fresh_embedding = base.mode == TrainMode::group_emb;
    return f;
  };

  if (variant == LosoVariant::subject_scratch) {
    const ModelConfig cfg = model_config_for(ds, base);
    for (double r : ratios) {
      const SplitPlan sub_plan = subsample_training(plan, static_cast<std::size_t>(left_out), r);
      Model m(cfg, derive_seed(base.seed, 5, left_out));
      const auto train_set = collect_examples(ds, sub_plan, SplitPart::train, {left_out});
      if (train_set.size() > 0) {
        const int bs = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(base.batch_size), train_set.size()));
        fit(m, train_set, nullptr, {base.epochs, base.lr, bs, derive_seed(base.seed, 6, left_out), 0});
      }
      curve.accuracy.push_back(evaluate_subjects(m, ds, plan, {left_out}).front().accuracy);
    }
    return curve;
  }

  std::vector<int> others;
  for (int s = 0; s < ds.n_subjects(); ++s)
    if (s != left_out) others.push_back(s);
  const auto pre = train(ds, plan, base, others);
  const Model& group_model = pre.models.front();

  for (double r : ratios) {
    const SplitPlan sub_plan = subsample_training(plan, static_cast<std::size_t>(left_out), r);
    FinetuneSpec f = finetune_budget(sub_plan);
    const auto n_train = collect_examples(ds, sub_plan, SplitPart::train, {left_out}).size();
    if (n_train == 0) f.epochs = 0;
    const auto ft = finetune(group_model, ds, sub_plan, left_out, f);
    curve.accuracy.push_back(ft.result.accuracy);
  }
  return curve;
}

SubgroupCurve subgroup_scaling(const EpochedDataset& raw, const SplitPlan& plan, std::uint64_t order_seed,
                               const TrainSpec& spec) {
  const int S = raw.n_subjects();
  SubgroupCurve out;
  out.order.resize(static_cast<std::size_t>(S));
  std::iota(out.order.begin(), out.order.end(), 0);
  Rng rng = make_rng(order_seed, 410);
  std::shuffle(out.order.begin(), out.order.end(), rng);

  TrainSpec base = spec;
  base.mode = TrainMode::group_emb;
  const auto prepared = prepare(raw, plan, base.resolved_preprocessing());
  const double chance = 1.0 / raw.n_classes;

  out.per_subject.assign(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(S), chance));
  out.all_subjects.resize(static_cast<std::size_t>(S));
  out.trained_subjects.resize(static_cast<std::size_t>(S));
  out.n_subjects.resize(static_cast<std::size_t>(S));
  parallel_for(S, spec.jobs, [&](int i) {
    const int n = i + 1;
    TrainSpec run = base;
    run.jobs = 1;
    // sorted so that the full-size subset trains exactly like an all-subject run
    std::vector<int> subset(out.order.begin(), out.order.begin() + n);
    std::sort(subset.begin(), subset.end());
    const auto result = train(prepared.data, plan, run, subset);
    auto& row = out.per_subject[static_cast<std::size_t>(i)];
    double trained = 0.0;
    for (std::size_t k = 0; k < subset.size(); ++k) {
      row[static_cast<std::size_t>(subset[k])] = result.report.subjects[k].accuracy;
      trained += result.report.subjects[k].accuracy;
    }
    out.n_subjects[static_cast<std::size_t>(i)] = n;
    out.trained_subjects[static_cast<std::size_t>(i)] = trained / n;
    out.all_subjects[static_cast<std::size_t>(i)] = (trained + (S - n) * chance) / S;
  });
  return out;
}

KFoldResult kfold_cv(const EpochedDataset& raw, const TrainSpec& spec, int k, std::uint64_t split_seed) {
  const auto folds = make_kfold_splits(raw, k, split_seed);
  KFoldResult out;
  out.fold_accuracy.resize(folds.size());
  parallel_for(static_cast<int>(folds.size()), spec.jobs, [&](int f) {
    TrainSpec run = spec;
    run.jobs = 1;
    const auto& plan = folds[static_cast<std::size_t>(f)];
    const auto prepared = prepare(raw, plan, run.resolved_preprocessing());
    out.fold_accuracy[static_cast<std::size_t>(f)] = train(prepared.data, plan, run).report.mean_accuracy;
  });
  out.mean = stats::mean(out.fold_accuracy);
  out.ci = stats::confidence_interval(out.fold_accuracy, 0.95);
  return out;
}

std::string to_string(AblationMode m) { return m == AblationMode::zero ? "zero" : "shuffle"; }

AblationMode ablation_mode_from_string(const std::string& s) {
  if (s == "zero") return AblationMode::zero;
  if (s == "shuffle") return AblationMode::shuffle;
  throw std::invalid_argument("unknown ablation mode '" + s + "' (expected zero or shuffle)");
}

AblationResult embedding_ablation(const Model& model, const EpochedDataset& ds, const SplitPlan& plan,
                                  AblationMode mode, std::uint64_t seed,
                                  const std::optional<std::vector<int>>& permutation) {
  if (!model.has_embeddings()) throw std::invalid_argument("embedding ablation requires a model with E > 0");
  const int S = ds.n_subjects();
  if (model.config().n_subjects < S)
    throw std::invalid_argument("embedding table has fewer rows than the dataset has subjects");
  std::vector<int> subjects(static_cast<std::size_t>(S));
  std::iota(subjects.begin(), subjects.end(), 0);

  AblationResult out;
  out.mode = mode;
  Model ablated = model;
  if (mode == AblationMode::zero) {
    ablated.embeddings().setZero();
  } else {
    if (permutation) {
      out.permutation = *permutation;
      auto sorted = out.permutation;
      std::sort(sorted.begin(), sorted.end());
      if (sorted != subjects) throw std::invalid_argument("ablation permutation is not a permutation of the subjects");
    } else {
      out.permutation = subjects;
      Rng rng = make_rng(seed, 420);
      std::shuffle(out.permutation.begin(), out.permutation.end(), rng);
    }
    for (int s = 0; s < S; ++s)
      ablated.embeddings().row(s) = model.embeddings().row(out.permutation[static_cast<std::size_t>(s)]);
  }

  for (const auto& r : evaluate_subjects(model, ds, plan, subjects)) out.intact.push_back(r.accuracy);
  for (const auto& r : evaluate_subjects(ablated, ds, plan, subjects)) out.ablated.push_back(r.accuracy);
  out.mean_drop = stats::mean(out.intact) - stats::mean(out.ablated);
  try {
    out.test = stats::wilcoxon_signed_rank(out.intact, out.ablated, stats::Sided::greater);
  } catch (const std::domain_error&) {
    out.test.test = "wilcoxon_signed_rank";
    out.test.sided = stats::Sided::greater;
    out.test.p = 1.0;
    out.test.n = 0;
  }
  return out;
}

nlohmann::json to_json(const LosoCurve& c) {
  return {{"left_out", c.left_out}, {"variant", to_string(c.variant)}, {"ratios", c.ratios}, {"accuracy", c.accuracy}};
}

LosoCurve loso_curve_from_json(const nlohmann::json& j) {
  LosoCurve c;
  c.left_out = j.at("left_out").get<std::string>();
  c.variant = loso_variant_from_string(j.at("variant").get<std::string>());
  c.ratios = j.at("ratios").get<std::vector<double>>();
  c.accuracy = j.at("accuracy").get<std::vector<double>>();
  return c;
}

SubgroupCurve subgroup_curve_from_json(const nlohmann::json& j) {
  SubgroupCurve c;
  c.order = j.at("order").get<std::vector<int>>();
  c.n_subjects = j.at("n_subjects").get<std::vector<int>>();
  c.all_subjects = j.at("all_subjects").get<std::vector<double>>();
  c.trained_subjects = j.at("trained_subjects").get<std::vector<double>>();
  c.per_subject = j.at("per_subject").get<std::vector<std::vector<double>>>();
  return c;
}

nlohmann::json to_json(const SubgroupCurve& c) {
  return {{"order", c.order},
          {"n_subjects", c.n_subjects},
          {"all_subjects", c.all_subjects},
          {"trained_subjects", c.trained_subjects},
          {"per_subject", c.per_subject}};
}

nlohmann::json to_json(const KFoldResult& r) {
  return {{"fold_accuracy", r.fold_accuracy}, {"mean", r.mean}, {"ci95", {r.ci.lo, r.ci.hi}}};
}

nlohmann::json to_json(const AblationResult& r) {
  return {{"mode", to_string(r.mode)},       {"permutation", r.permutation}, {"intact", r.intact},
          {"ablated", r.ablated},             {"mean_drop", r.mean_drop},     {"test", stats::to_json(r.test)}};
}

}  // namespace gdec
