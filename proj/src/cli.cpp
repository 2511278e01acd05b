#include "groupdecode/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"

#include "groupdecode/checkpoint.hpp"
#include "groupdecode/dataio.hpp"
#include "groupdecode/experiments.hpp"
#include "groupdecode/interpret.hpp"
#include "groupdecode/parallel.hpp"
#include "groupdecode/report.hpp"

namespace gdec {

namespace fs = std::filesystem;
using json = nlohmann::json;

json merge_config(const json& base, const json& overlay, const std::string& where) {
  if (!overlay.is_object())
    throw ConfigError(where.empty() ? "config must be a JSON object" : "config key '" + where + "' must be an object");
  json out = base;
  for (const auto& [key, value] : overlay.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    const json& b = base.at(key);
    if (b.is_null() || value.is_null()) {
      out[key] = value;
      continue;
    }
    if (b.is_object()) {
      out[key] = merge_config(b, value, path);
      continue;
    }
    auto expect = [&](const char* what) {
      throw ConfigError("config key '" + path + "' expects " + what + ", got " + value.dump());
    };
    if (b.is_number_integer()) {
      if (!value.is_number()) expect("an integer");
      if (value.is_number_float()) {
        const double v = value.get<double>();
        if (v != std::floor(v)) expect("an integer");
        out[key] = static_cast<std::int64_t>(v);
        continue;
      }
    } else if (b.is_number()) {
      if (!value.is_number()) expect("a number");
    } else if (b.is_boolean()) {
      if (!value.is_boolean()) expect("a boolean");
    } else if (b.is_string()) {
      if (!value.is_string()) expect("a string");
    } else if (b.is_array()) {
      if (!value.is_array()) expect("an array");
    }
    out[key] = value;
  }
  return out;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const std::optional<std::uint64_t>& file) {
  if (flag) return *flag;
  if (file) return *file;
  if (const char* env = std::getenv("GROUPDECODE_SEED"); env && *env) {
    std::uint64_t v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto res = std::from_chars(env, end, v);
    if (res.ec != std::errc() || res.ptr != end)
      throw ConfigError(std::string("GROUPDECODE_SEED must be a non-negative integer, got '") + env + "'");
    return v;
  }
  return 0;
}

namespace {

enum class Kind { integer, real, boolean, text, int_list, real_list, text_list };

struct Binding {
  std::string flag;
  std::string pointer;
  Kind kind;
  std::string raw;
  bool toggled = false;
  CLI::Option* option = nullptr;
};

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(raw);
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

json parse_scalar(const Binding& b, const std::string& text, Kind kind) {
  auto bad = [&](const char* what) -> json {
    throw ConfigError("invalid value for " + b.flag + ": '" + text + "' (expected " + what + ")");
  };
  if (kind == Kind::integer) {
    std::int64_t v = 0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) return bad("an integer");
    return v;
  }
  if (kind == Kind::real) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(text, &pos);
    } catch (const std::exception&) {
      return bad("a number");
    }
    if (pos != text.size()) return bad("a number");
    return v;
  }
  return text;
}

/// Flags mapped onto config keys; only flags given on the command line reach the overlay.
class Flags {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& pointer, Kind kind, const std::string& help) {
    auto b = std::make_unique<Binding>();
    b->flag = flag;
    b->pointer = pointer;
    b->kind = kind;
    if (kind == Kind::boolean)
      b->option = app->add_flag(flag, b->toggled, help);
    else
      b->option = app->add_option(flag, b->raw, help);
    bindings_.push_back(std::move(b));
  }

  json overlay() const {
    json j = json::object();
    for (const auto& b : bindings_) {
      if (b->option->count() == 0) continue;
      json value;
      switch (b->kind) {
        case Kind::boolean: value = b->toggled; break;
        case Kind::int_list:
        case Kind::real_list:
        case Kind::text_list: {
          value = json::array();
          const Kind item = b->kind == Kind::int_list ? Kind::integer : b->kind == Kind::real_list ? Kind::real : Kind::text;
          for (const auto& part : split_list(b->raw)) value.push_back(parse_scalar(*b, part, item));
          break;
        }
        default: value = parse_scalar(*b, b->raw, b->kind);
      }
      j[json::json_pointer(b->pointer)] = value;
    }
    return j;
  }

 private:
  std::vector<std::unique_ptr<Binding>> bindings_;
};

/// Options shared by every subcommand that writes a run directory.
struct Common {
  std::string config_path;
  std::string out;
  Flags flags;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config_path, "JSON config; flags override its values")->check(CLI::ExistingFile);
  if (needs_out) cmd->add_option("--out", c.out, "Output directory")->required();
  c.flags.add(cmd, "--seed", "/seed", Kind::integer, "Global seed (falls back to GROUPDECODE_SEED, then 0)");
  c.flags.add(cmd, "--jobs", "/jobs", Kind::integer, "Worker threads for independent runs and repeats");
  c.flags.add(cmd, "--preset", "/preset", Kind::text, "desk | paper");
}

void add_train_flags(CLI::App* cmd, Flags& f, const std::string& prefix) {
  f.add(cmd, "--mode", prefix + "/mode", Kind::text, "subject | group | group_emb");
  f.add(cmd, "--linear", prefix + "/linear", Kind::boolean, "Identity activation (linear variant)");
  f.add(cmd, "--epochs", prefix + "/epochs", Kind::integer, "Training epochs");
  f.add(cmd, "--lr", prefix + "/lr", Kind::real, "Adam learning rate");
  f.add(cmd, "--batch-size", prefix + "/batch_size", Kind::integer, "Minibatch size");
  f.add(cmd, "--layers", prefix + "/n_conv_layers", Kind::integer, "Dilated convolution layers");
  f.add(cmd, "--hidden", prefix + "/hidden_channels", Kind::integer, "Convolution channels");
  f.add(cmd, "--fc-hidden", prefix + "/fc_hidden", Kind::integer, "Dense hidden units");
  f.add(cmd, "--dropout", prefix + "/dropout", Kind::real, "Dropout rate");
  f.add(cmd, "--embedding-size", prefix + "/embedding_size", Kind::integer, "Subject embedding size");
  f.add(cmd, "--preprocessing", prefix + "/preprocessing", Kind::text, "standardize | whiten | none");
  f.add(cmd, "--eval-every", prefix + "/eval_every", Kind::integer, "Validation curve interval in epochs");
  f.add(cmd, "--init-checkpoint", prefix + "/init_checkpoint", Kind::text, "Initialize from a checkpoint");
}

void add_finetune_flags(CLI::App* cmd, Flags& f) {
  f.add(cmd, "--ft-epochs", "/finetune/epochs", Kind::integer, "Finetuning epochs");
  f.add(cmd, "--ft-lr", "/finetune/lr", Kind::real, "Finetuning learning rate");
  f.add(cmd, "--ft-batch-size", "/finetune/batch_size", Kind::integer, "Finetuning minibatch size");
}

json value_at(const json& j, const std::string& pointer) {
  const json::json_pointer p(pointer);
  return j.contains(p) ? j.at(p) : json();
}

/// First non-null of flag overlay, file overlay, fallback.
json peek(const json& flags, const json& file, const std::string& pointer, const json& fallback) {
  if (auto v = value_at(flags, pointer); !v.is_null()) return v;
  if (auto v = value_at(file, pointer); !v.is_null()) return v;
  return fallback;
}

json train_section(const std::string& preset, TrainMode mode, bool linear) {
  json j = to_json(preset == "paper" ? TrainSpec::paper(mode, linear) : TrainSpec::desk(mode, linear));
  j.erase("seed");
  return j;
}

json finetune_section(const std::string& preset) {
  json j = to_json(preset == "paper" ? FinetuneSpec::paper() : FinetuneSpec::desk());
  j.erase("seed");
  j.erase("fresh_embedding");
  return j;
}

template <class F>
auto as_config(const std::string& what, F&& parse) {
  try {
    return parse();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(what + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

TrainSpec parse_train(const json& section, std::uint64_t seed, int jobs) {
  return as_config("train settings", [&] {
    TrainSpec s = train_spec_from_json(section);
    s.seed = seed;
    s.jobs = jobs;
    return s;
  });
}

std::string required_string(const json& cfg, const std::string& key, const std::string& flag) {
  if (!cfg.contains(key) || cfg.at(key).is_null())
    throw ConfigError("missing required setting '" + key + "' (use " + flag + " or the config file)");
  if (!cfg.at(key).is_string()) throw ConfigError("config key '" + key + "' expects a string");
  return cfg.at(key).get<std::string>();
}

struct Context {
  json config;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string preset;
  fs::path out;
};

/// defaults (preset) < config file < flags; the result is what gets persisted.
Context resolve(const std::string& command, const Common& c, const std::function<json(const std::string&, const json&, const json&)>& defaults) {
  json file = json::object();
  if (!c.config_path.empty()) {
    try {
      file = read_json(c.config_path);
    } catch (const std::runtime_error& e) {
      throw ConfigError(e.what());
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    if (file.contains("command") && file.at("command") != command)
      throw ConfigError("config file was written for '" + file.at("command").dump() + "', not '" + command + "'");
  }
  const json flags = c.flags.overlay();
  const std::string preset = peek(flags, file, "/preset", "desk").get<std::string>();
  if (preset != "desk" && preset != "paper") throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");

  json base = defaults(preset, file, flags);
  base["command"] = command;
  base["preset"] = preset;
  base["seed"] = resolve_seed(std::nullopt, std::nullopt);
  base["jobs"] = 1;
  json merged = merge_config(merge_config(base, file), flags);

  Context ctx;
  ctx.config = merged;
  ctx.preset = preset;
  ctx.seed = as_config("seed", [&] {
    if (!merged.at("seed").is_number_integer() || merged.at("seed").get<std::int64_t>() < 0)
      throw ConfigError("seed must be a non-negative integer");
    return merged.at("seed").get<std::uint64_t>();
  });
  ctx.jobs = merged.at("jobs").get<int>();
  if (ctx.jobs < 1) throw ConfigError("jobs must be >= 1");
  ctx.out = c.out;
  return ctx;
}

fs::path absolute_path(const std::string& p) { return fs::weakly_canonical(fs::absolute(p)); }

void prepare_out(const Context& ctx, const std::vector<fs::path>& inputs) {
  const auto out = absolute_path(ctx.out.string());
  for (const auto& in : inputs)
    if (out == absolute_path(in.string()))
      throw ConfigError("output directory " + out.string() + " is an input; choose a separate --out");
  fs::create_directories(out);
  write_json(out / "config.json", ctx.config);
}

void finish(const Context& ctx, const json& results) {
  write_json(ctx.out / "results.json", results);
  render_run(ctx.out);
}

std::string checkpoint_name(const std::string& subject) { return subject.empty() ? "model.ckpt" : "model_" + subject + ".ckpt"; }

struct LoadedRun {
  fs::path dir;
  json config;
  TrainSpec spec;
  EpochedDataset raw;
  SplitPlan plan;
  PreparedData prep;
  ExperimentReport report;
  /// One model for group runs; per report subject for subject runs.
  std::vector<Model> models;
};

LoadedRun load_run(const fs::path& dir) {
  LoadedRun run;
  run.dir = dir;
  if (!fs::exists(dir / "config.json") || !fs::exists(dir / "results.json"))
    throw std::runtime_error("run directory " + dir.string() + " lacks config.json or results.json");
  run.config = read_json(dir / "config.json");
  if (run.config.value("command", std::string()) != "train")
    throw ConfigError("run directory " + dir.string() + " holds a '" + run.config.value("command", std::string("?")) +
                      "' run; expected a train run");
  const auto seed = run.config.at("seed").get<std::uint64_t>();
  run.spec = parse_train(run.config.at("train"), seed, 1);
  run.raw = read_dataset(run.config.at("data").get<std::string>());
  run.plan = make_splits(run.raw, seed);
  run.prep = prepare(run.raw, run.plan, run.spec.resolved_preprocessing());
  run.report = experiment_report_from_json(read_json(dir / "results.json").at("report"));
  const ModelConfig cfg = model_config_for(run.prep.data, run.spec);
  if (run.spec.mode == TrainMode::subject) {
    for (const auto& s : run.report.subjects) run.models.push_back(load_checkpoint(dir / checkpoint_name(s.id), cfg));
  } else {
    run.models.push_back(load_checkpoint(dir / checkpoint_name(""), cfg));
  }
  return run;
}

int subject_index(const EpochedDataset& ds, const std::string& id) {
  try {
    return static_cast<int>(ds.subject_index(id));
  } catch (const std::out_of_range&) {
    throw ConfigError("unknown subject '" + id + "'");
  }
}

/// The model that scores `subject` (or the group model), and the evaluation set.
std::pair<const Model*, ExampleSet> model_and_eval(const LoadedRun& run, const json& subject) {
  std::vector<int> subjects;
  const Model* model = &run.models.front();
  if (!subject.is_null()) subjects.push_back(subject_index(run.prep.data, subject.get<std::string>()));
  if (run.spec.mode == TrainMode::subject) {
    if (subjects.empty()) throw ConfigError("a subject-mode run needs --subject to pick a model");
    const auto id = subject.get<std::string>();
    for (std::size_t i = 0; i < run.report.subjects.size(); ++i)
      if (run.report.subjects[i].id == id) model = &run.models[i];
  }
  return {model, collect_examples(run.prep.data, run.plan, SplitPart::val, subjects)};
}

// ---------------------------------------------------------------------------------------------

int cmd_gen(const Common& c, std::ostream& out) {
  auto ctx = resolve("gen", c, [](const std::string&, const json&, const json&) {
    json synthetic = to_json(SyntheticSpec::desk());
    synthetic.erase("seed");
    return json{{"synthetic", synthetic}};
  });
  SyntheticSpec spec = as_config("synthetic settings", [&] {
    SyntheticSpec s = synthetic_spec_from_json(ctx.config.at("synthetic"));
    s.seed = ctx.seed;
    s.validate();
    return s;
  });
  const auto ds = generate_synthetic(spec);
  if (fs::exists(ctx.out / "manifest.json")) throw ConfigError(ctx.out.string() + " already holds a dataset");
  write_dataset(ds, ctx.out);
  write_json(ctx.out / "config.json", ctx.config);
  std::ostringstream checksum;
  checksum << std::hex << std::setw(8) << std::setfill('0') << dataset_checksum(ds);
  json results = {{"kind", "gen"},
                  {"checksum", checksum.str()},
                  {"info_channels", spec.resolved_info_channels()},
                  {"subject_angles", json::array()}};
  for (int s = 0; s < spec.n_subjects; ++s) results["subject_angles"].push_back(spec.subject_angle(s));
  write_json(ctx.out / "results.json", results);
  out << "gen: " << ds.n_subjects() << " subjects, checksum " << checksum.str() << " -> " << ctx.out.string() << "\n";
  return 0;
}

json train_defaults(const std::string& preset, const json& file, const json& flags) {
  const auto mode = as_config("train settings", [&] {
    return train_mode_from_string(peek(flags, file, "/train/mode", "group_emb").get<std::string>());
  });
  const bool linear = peek(flags, file, "/train/linear", false).get<bool>();
  return json{{"data", nullptr}, {"train", train_section(preset, mode, linear)}};
}

int cmd_train(const Common& c, std::ostream& out) {
  auto ctx = resolve("train", c, train_defaults);
  const auto data = absolute_path(required_string(ctx.config, "data", "--data"));
  ctx.config["data"] = data.string();
  const TrainSpec spec = parse_train(ctx.config.at("train"), ctx.seed, ctx.jobs);
  const auto raw = read_dataset(data);
  const auto plan = make_splits(raw, ctx.seed);
  prepare_out(ctx, {data});
  const auto prep = prepare(raw, plan, spec.resolved_preprocessing());
  auto result = train(prep.data, plan, spec);
  const json meta = {{"config_hash", result.report.config_hash}};
  if (spec.mode == TrainMode::subject) {
    for (std::size_t i = 0; i < result.models.size(); ++i)
      save_checkpoint(result.models[i], ctx.out / checkpoint_name(result.report.subjects[i].id), meta);
  } else {
    save_checkpoint(result.models.front(), ctx.out / checkpoint_name(""), meta);
  }
  write_json(ctx.out / "split.json", to_json(plan));
  write_json(ctx.out / "transforms.json", to_json(prep.transforms));
  finish(ctx, {{"kind", "train"}, {"report", to_json(result.report)}});
  out << "train " << to_string(spec.mode) << (spec.linear ? " (linear)" : "") << ": mean accuracy "
      << result.report.mean_accuracy << " over " << result.report.subjects.size() << " subjects -> "
      << ctx.out.string() << "\n";
  return 0;
}

int cmd_finetune(const Common& c, std::ostream& out) {
  auto ctx = resolve("finetune", c, [](const std::string& preset, const json&, const json&) {
    return json{{"run", nullptr}, {"subjects", json::array()}, {"finetune", finetune_section(preset)}};
  });
  const auto run_dir = absolute_path(required_string(ctx.config, "run", "--run"));
  ctx.config["run"] = run_dir.string();
  FinetuneSpec fspec = as_config("finetune settings", [&] {
    FinetuneSpec f = finetune_spec_from_json(ctx.config.at("finetune"));
    f.seed = ctx.seed;
    return f;
  });
  const auto run = load_run(run_dir);
  if (run.spec.mode == TrainMode::subject) throw ConfigError("finetuning needs a group or group_emb run");
  std::vector<int> subjects;
  for (const auto& id : ctx.config.at("subjects")) subjects.push_back(subject_index(run.prep.data, id.get<std::string>()));
  if (subjects.empty())
    for (int s = 0; s < run.prep.data.n_subjects(); ++s) subjects.push_back(s);
  prepare_out(ctx, {run_dir, run.config.at("data").get<std::string>()});

  std::vector<std::optional<FinetuneResult>> results(subjects.size());
  parallel_for(static_cast<int>(subjects.size()), ctx.jobs, [&](int i) {
    results[static_cast<std::size_t>(i)] =
        finetune(run.models.front(), run.prep.data, run.plan, subjects[static_cast<std::size_t>(i)], fspec);
  });
  ExperimentReport report;
  report.name = "finetune";
  report.spec = run.spec;
  report.config_hash = run.report.config_hash;
  report.extra = {{"finetune", to_json(fspec)}, {"source_run", run_dir.string()}};
  for (auto& r : results) {
    save_checkpoint(r->model, ctx.out / checkpoint_name(r->result.id), {{"source", run.report.config_hash}});
    report.subjects.push_back(r->result);
    report.curves.push_back(r->curves);
  }
  report.mean_accuracy = stats::mean(report.accuracies());
  finish(ctx, {{"kind", "finetune"}, {"report", to_json(report)}});
  out << "finetune: mean accuracy " << report.mean_accuracy << " over " << subjects.size() << " subjects -> "
      << ctx.out.string() << "\n";
  return 0;
}

json loso_tests(const std::vector<LosoCurve>& curves, const EpochedDataset& raw, const SplitPlan& plan) {
  const double chance = 1.0 / raw.n_classes;
  json tests = json::object();
  auto at_ratio = [](const LosoCurve& c, double r) -> std::optional<double> {
    for (std::size_t i = 0; i < c.ratios.size(); ++i)
      if (c.ratios[i] == r) return c.accuracy[i];
    return std::nullopt;
  };
  int group_variants = 0;
  for (auto v : {LosoVariant::group, LosoVariant::group_emb})
    for (const auto& c : curves)
      if (c.variant == v) {
        ++group_variants;
        break;
      }
  for (auto v : {LosoVariant::group, LosoVariant::group_emb, LosoVariant::subject_scratch}) {
    std::vector<double> zero, one;
    std::vector<std::string> ids;
    for (const auto& c : curves) {
      if (c.variant != v) continue;
      if (auto a = at_ratio(c, 0.0)) zero.push_back(*a), ids.push_back(c.left_out);
      if (auto a = at_ratio(c, 1.0)) one.push_back(*a);
    }
    if (zero.empty()) continue;
    json t = {{"ratio0", zero}};
    if (v == LosoVariant::subject_scratch) {
      json within = json::array();
      for (std::size_t i = 0; i < zero.size(); ++i) {
        const auto n = static_cast<int>(collect_examples(raw, plan, SplitPart::val, {subject_index(raw, ids[i])}).size());
        const auto ci = stats::binomial_interval(static_cast<int>(std::lround(zero[i] * n)), n, 0.99);
        within.push_back(ci.lo <= chance && chance <= ci.hi);
      }
      t["chance_within_99ci"] = within;
    } else {
      std::vector<double> diff;
      for (double a : zero) diff.push_back(a - chance);
      try {
        auto r = stats::wilcoxon_signed_rank(diff, stats::Sided::greater);
        t["above_chance"] = stats::to_json(r);
        t["above_chance"]["p_bonferroni"] = stats::bonferroni(r.p, std::max(1, group_variants));
      } catch (const std::domain_error& e) {
        t["above_chance"] = e.what();
      }
      if (one.size() == zero.size()) {
        t["ratio1"] = one;
        try {
          t["ratio1_vs_ratio0"] = stats::to_json(stats::sign_test(one, zero, stats::Sided::greater));
        } catch (const std::domain_error& e) {
          t["ratio1_vs_ratio0"] = e.what();
        }
      }
    }
    tests[to_string(v)] = t;
  }
  tests["chance"] = chance;
  return tests;
}

int cmd_loso(const Common& c, std::ostream& out) {
  auto ctx = resolve("loso", c, [](const std::string& preset, const json& file, const json& flags) {
    const bool linear = peek(flags, file, "/train/linear", false).get<bool>();
    json ratios = json::array();
    for (int i = 0; i <= 10; ++i) ratios.push_back(i / 10.0);
    return json{{"data", nullptr},
                {"train", train_section(preset, TrainMode::group_emb, linear)},
                {"subject_train", train_section(preset, TrainMode::subject, linear)},
                {"finetune", finetune_section(preset)},
                {"variants", {"group", "group_emb", "subject_scratch"}},
                {"ratios", ratios},
                {"left_out", json::array()}};
  });
  const auto data = absolute_path(required_string(ctx.config, "data", "--data"));
  ctx.config["data"] = data.string();
  const TrainSpec group_spec = parse_train(ctx.config.at("train"), ctx.seed, 1);
  const TrainSpec subject_spec = parse_train(ctx.config.at("subject_train"), ctx.seed, 1);
  FinetuneSpec fspec = as_config("finetune settings", [&] {
    FinetuneSpec f = finetune_spec_from_json(ctx.config.at("finetune"));
    f.seed = ctx.seed;
    return f;
  });
  std::vector<LosoVariant> variants;
  std::vector<double> ratios;
  as_config("loso settings", [&] {
    for (const auto& v : ctx.config.at("variants")) variants.push_back(loso_variant_from_string(v.get<std::string>()));
    ratios = ctx.config.at("ratios").get<std::vector<double>>();
    return 0;
  });
  if (variants.empty() || ratios.empty()) throw ConfigError("loso needs at least one variant and one ratio");
  const auto raw = read_dataset(data);
  const auto plan = make_splits(raw, ctx.seed);
  std::vector<int> left_out;
  for (const auto& id : ctx.config.at("left_out")) left_out.push_back(subject_index(raw, id.get<std::string>()));
  if (left_out.empty())
    for (int s = 0; s < raw.n_subjects(); ++s) left_out.push_back(s);
  prepare_out(ctx, {data});

  const auto n_items = static_cast<int>(left_out.size() * variants.size());
  std::vector<LosoCurve> curves(static_cast<std::size_t>(n_items));
  parallel_for(n_items, ctx.jobs, [&](int i) {
    const auto s = left_out[static_cast<std::size_t>(i) / variants.size()];
    const auto v = variants[static_cast<std::size_t>(i) % variants.size()];
    const TrainSpec& spec = v == LosoVariant::subject_scratch ? subject_spec : group_spec;
    curves[static_cast<std::size_t>(i)] = loso_run(raw, plan, s, ratios, v, spec, fspec);
  });
  json jc = json::array();
  for (const auto& cv : curves) jc.push_back(to_json(cv));
  finish(ctx, {{"kind", "loso"}, {"curves", jc}, {"tests", loso_tests(curves, raw, plan)}});
  out << "loso: " << curves.size() << " curves over " << ratios.size() << " ratios -> " << ctx.out.string() << "\n";
  return 0;
}

int cmd_subgroup(const Common& c, std::ostream& out) {
  auto ctx = resolve("subgroup", c, [](const std::string& preset, const json& file, const json& flags) {
    const bool linear = peek(flags, file, "/train/linear", false).get<bool>();
    return json{{"data", nullptr}, {"train", train_section(preset, TrainMode::group_emb, linear)}, {"order_seed", nullptr}};
  });
  const auto data = absolute_path(required_string(ctx.config, "data", "--data"));
  ctx.config["data"] = data.string();
  const TrainSpec spec = parse_train(ctx.config.at("train"), ctx.seed, ctx.jobs);
  const auto& os = ctx.config.at("order_seed");
  if (!os.is_null() && !os.is_number_unsigned()) throw ConfigError("order_seed must be a non-negative integer");
  const std::uint64_t order_seed = os.is_null() ? ctx.seed : os.get<std::uint64_t>();
  const auto raw = read_dataset(data);
  const auto plan = make_splits(raw, ctx.seed);
  prepare_out(ctx, {data});
  const auto curve = subgroup_scaling(raw, plan, order_seed, spec);
  finish(ctx, {{"kind", "subgroup"}, {"curve", to_json(curve)}, {"order_seed", order_seed}});
  out << "subgroup: " << curve.n_subjects.size() << " points -> " << ctx.out.string() << "\n";
  return 0;
}

int cmd_kfold(const Common& c, std::ostream& out) {
  auto ctx = resolve("kfold", c, [](const std::string& preset, const json& file, const json& flags) {
    json j = train_defaults(preset, file, flags);
    j["k"] = 5;
    return j;
  });
  const auto data = absolute_path(required_string(ctx.config, "data", "--data"));
  ctx.config["data"] = data.string();
  const TrainSpec spec = parse_train(ctx.config.at("train"), ctx.seed, ctx.jobs);
  const int k = ctx.config.at("k").get<int>();
  if (k < 2) throw ConfigError("k must be >= 2");
  const auto raw = read_dataset(data);
  prepare_out(ctx, {data});
  const auto r = kfold_cv(raw, spec, k, ctx.seed);
  finish(ctx, {{"kind", "kfold"}, {"kfold", to_json(r)}});
  out << "kfold: mean accuracy " << r.mean << " [" << r.ci.lo << ", " << r.ci.hi << "] -> " << ctx.out.string() << "\n";
  return 0;
}

int cmd_pfi(const Common& c, std::ostream& out) {
  auto ctx = resolve("pfi", c, [](const std::string&, const json&, const json&) {
    json pfi = to_json(PfiConfig{});
    pfi.erase("seed");
    return json{{"run", nullptr},
                {"kind", "temporal"},
                {"grouping", "single"},
                {"subject", nullptr},
                {"pfi", pfi},
                {"kernel", {{"layer", 0}, {"kernel", 0}, {"axis", "time"}, {"standardize", false}}}};
  });
  const auto run_dir = absolute_path(required_string(ctx.config, "run", "--run"));
  ctx.config["run"] = run_dir.string();
  PfiConfig cfg = as_config("pfi settings", [&] {
    PfiConfig p = pfi_config_from_json(ctx.config.at("pfi"));
    p.seed = ctx.seed;
    p.jobs = ctx.jobs;
    return p;
  });
  const std::string kind = ctx.config.at("kind").get<std::string>();
  static const std::vector<std::string> kinds = {"temporal", "spatial", "spatiotemporal", "spectral", "kernel"};
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ConfigError("unknown PFI kind '" + kind + "' (expected temporal, spatial, spatiotemporal, spectral or kernel)");
  const auto grouping = as_config("pfi settings", [&] {
    return spatial_grouping_from_string(ctx.config.at("grouping").get<std::string>());
  });
  const auto run = load_run(run_dir);
  as_config("pfi settings", [&] {
    cfg.validate(run.prep.data.sfreq, run.prep.data.n_channels());
    return 0;
  });
  const auto [model, eval] = model_and_eval(run, ctx.config.at("subject"));
  prepare_out(ctx, {run_dir, run.config.at("data").get<std::string>()});

  PfiResult r;
  const auto& ds = run.prep.data;
  if (kind == "temporal") {
    r = temporal_pfi(*model, ds, eval, cfg);
  } else if (kind == "spatial") {
    r = spatial_pfi(*model, ds, eval, cfg, grouping);
  } else if (kind == "spatiotemporal") {
    r = spatiotemporal_pfi(*model, ds, eval, cfg);
  } else if (kind == "spectral") {
    r = spectral_pfi(*model, ds, eval, cfg);
  } else {
    const auto& k = ctx.config.at("kernel");
    const KernelRef ref{k.at("layer").get<int>(), k.at("kernel").get<int>()};
    const auto axis = as_config("kernel settings", [&] { return kernel_axis_from_string(k.at("axis").get<std::string>()); });
    try {
      ref.validate(model->config());
    } catch (const std::out_of_range& e) {
      throw ConfigError(e.what());
    }
    r = kernel_pfi(*model, ref, ds, eval, cfg, axis, k.at("standardize").get<bool>());
  }
  finish(ctx, {{"kind", "pfi"}, {"pfi_kind", kind}, {"pfi", to_json(r)}, {"layout", to_json(ds.layout)}});
  const auto peak = r.argmax();
  out << "pfi " << kind << ": " << r.cells.size() << " cells, peak " << r.cells[peak].label << " (" << r.mean(peak)
      << ") -> " << ctx.out.string() << "\n";
  return 0;
}

int cmd_fir(const Common& c, std::ostream& out) {
  auto ctx = resolve("fir", c, [](const std::string&, const json&, const json&) {
    return json{{"run", nullptr},  {"layer", 0},    {"kernel", -1},
                {"n_noise_trials", 100}, {"nperseg", 0}, {"subject", nullptr}};
  });
  const auto run_dir = absolute_path(required_string(ctx.config, "run", "--run"));
  ctx.config["run"] = run_dir.string();
  const auto run = load_run(run_dir);
  const auto [model, eval] = model_and_eval(run, ctx.config.at("subject"));
  (void)eval;
  const int layer = ctx.config.at("layer").get<int>();
  const int kernel = ctx.config.at("kernel").get<int>();
  const int n_noise = ctx.config.at("n_noise_trials").get<int>();
  if (n_noise < 1) throw ConfigError("n_noise_trials must be >= 1");
  std::vector<KernelRef> refs;
  if (kernel < 0) {
    for (int k = 0; k < model->config().hidden_channels; ++k) refs.push_back({layer, k});
  } else {
    refs.push_back({layer, kernel});
  }
  for (const auto& ref : refs) {
    try {
      ref.validate(model->config());
    } catch (const std::out_of_range& e) {
      throw ConfigError(e.what());
    }
  }
  const int subject =
      ctx.config.at("subject").is_null() ? 0 : subject_index(run.prep.data, ctx.config.at("subject").get<std::string>());
  prepare_out(ctx, {run_dir, run.config.at("data").get<std::string>()});
  std::vector<Psd> psds(refs.size());
  parallel_for(static_cast<int>(refs.size()), ctx.jobs, [&](int i) {
    psds[static_cast<std::size_t>(i)] = kernel_fir(*model, refs[static_cast<std::size_t>(i)], n_noise, ctx.seed,
                                                   run.prep.data.sfreq, ctx.config.at("nperseg").get<int>(),
                                                   model->has_embeddings() ? subject : 0);
  });
  json kernels = json::array();
  for (std::size_t i = 0; i < refs.size(); ++i)
    kernels.push_back(
        {{"layer", refs[i].layer}, {"kernel", refs[i].kernel}, {"freqs", psds[i].freqs}, {"power", psds[i].power}});
  finish(ctx, {{"kind", "fir"}, {"kernels", kernels}});
  out << "fir: " << refs.size() << " kernels of layer " << layer << " -> " << ctx.out.string() << "\n";
  return 0;
}

int cmd_embed(const Common& c, std::ostream& out) {
  auto ctx = resolve("embed", c, [](const std::string&, const json&, const json&) {
    return json{{"run", nullptr}, {"permutation", nullptr}};
  });
  const auto run_dir = absolute_path(required_string(ctx.config, "run", "--run"));
  ctx.config["run"] = run_dir.string();
  const auto run = load_run(run_dir);
  if (run.spec.mode != TrainMode::group_emb) throw ConfigError("embedding analysis needs a group_emb run");
  std::optional<std::vector<int>> permutation;
  if (!ctx.config.at("permutation").is_null())
    permutation = as_config("permutation", [&] { return ctx.config.at("permutation").get<std::vector<int>>(); });
  prepare_out(ctx, {run_dir, run.config.at("data").get<std::string>()});

  json results = {{"kind", "embed"}};
  try {
    results["diagnostics"] = to_json(embedding_diagnostics(run.models.front(), run.report.accuracies()));
  } catch (const std::invalid_argument& e) {
    results["diagnostics"] = nullptr;
    results["diagnostics_skipped"] = e.what();
  }
  results["ablations"] = json::array();
  for (auto mode : {AblationMode::zero, AblationMode::shuffle}) {
    const auto ab = embedding_ablation(run.models.front(), run.prep.data, run.plan, mode, ctx.seed,
                                       mode == AblationMode::shuffle ? permutation : std::nullopt);
    results["ablations"].push_back(to_json(ab));
  }
  finish(ctx, results);
  out << "embed: zero drop " << results["ablations"][0]["mean_drop"].get<double>() << ", shuffle drop "
      << results["ablations"][1]["mean_drop"].get<double>() << " -> " << ctx.out.string() << "\n";
  return 0;
}

int cmd_report(const std::string& run, std::ostream& out) {
  const auto files = render_run(run);
  out << "report: " << files.size() << " files regenerated in " << run << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Group-level decoding with subject embeddings: data generation, training and interpretation"};
  app.name("groupdecode");
  app.require_subcommand(1);

  Common gen, train, ft, loso, subgroup, kfold, pfi, fir, embed;
  std::string report_run;

  auto* g = app.add_subcommand("gen", "Generate a synthetic multi-subject dataset");
  add_common(g, gen);
  gen.flags.add(g, "--subjects", "/synthetic/n_subjects", Kind::integer, "Number of subjects");
  gen.flags.add(g, "--classes", "/synthetic/n_classes", Kind::integer, "Number of classes");
  gen.flags.add(g, "--trials-per-class", "/synthetic/trials_per_class", Kind::integer, "Trials per class and subject");
  gen.flags.add(g, "--channels", "/synthetic/n_channels", Kind::integer, "Sensor channels");
  gen.flags.add(g, "--timesteps", "/synthetic/n_timesteps", Kind::integer, "Samples per trial");
  gen.flags.add(g, "--sfreq", "/synthetic/sfreq", Kind::real, "Sampling rate (Hz)");
  gen.flags.add(g, "--mixing-angle", "/synthetic/subject_mixing_angle", Kind::real, "Largest subject rotation (rad)");
  gen.flags.add(g, "--mixed-fraction", "/synthetic/mixed_fraction", Kind::real, "Fraction of mixed informative pairs");
  gen.flags.add(g, "--noise", "/synthetic/noise_amplitude", Kind::real, "Background amplitude");
  gen.flags.add(g, "--alpha-hz", "/synthetic/alpha_hz", Kind::real, "Oscillation frequency (Hz)");
  gen.flags.add(g, "--info-window", "/synthetic/info_window", Kind::real_list, "start,end of the informative window (s)");
  gen.flags.add(g, "--info-channels", "/synthetic/info_channels", Kind::int_list, "Informative channel indices");

  auto* t = app.add_subcommand("train", "Train subject, group or group_emb models");
  add_common(t, train);
  train.flags.add(t, "--data", "/data", Kind::text, "Dataset directory");
  add_train_flags(t, train.flags, "/train");

  auto* f = app.add_subcommand("finetune", "Finetune a group run on individual subjects");
  add_common(f, ft);
  ft.flags.add(f, "--run", "/run", Kind::text, "Group train run directory");
  ft.flags.add(f, "--subjects", "/subjects", Kind::text_list, "Subject ids (default: all)");
  add_finetune_flags(f, ft.flags);

  auto* l = app.add_subcommand("loso", "Leave-one-subject-out sweep over training ratios");
  add_common(l, loso);
  loso.flags.add(l, "--data", "/data", Kind::text, "Dataset directory");
  loso.flags.add(l, "--variants", "/variants", Kind::text_list, "group,group_emb,subject_scratch");
  loso.flags.add(l, "--ratios", "/ratios", Kind::real_list, "Training ratios in [0, 1]");
  loso.flags.add(l, "--left-out", "/left_out", Kind::text_list, "Left-out subject ids (default: all)");
  loso.flags.add(l, "--epochs", "/train/epochs", Kind::integer, "Group pre-training epochs");
  loso.flags.add(l, "--lr", "/train/lr", Kind::real, "Group pre-training learning rate");
  loso.flags.add(l, "--subject-epochs", "/subject_train/epochs", Kind::integer, "From-scratch subject epochs");
  loso.flags.add(l, "--linear", "/train/linear", Kind::boolean, "Linear variant");
  add_finetune_flags(l, loso.flags);

  auto* sg = app.add_subcommand("subgroup", "Accuracy as subjects are added to group_emb training");
  add_common(sg, subgroup);
  subgroup.flags.add(sg, "--data", "/data", Kind::text, "Dataset directory");
  subgroup.flags.add(sg, "--order-seed", "/order_seed", Kind::integer, "Seed of the subject order (default: --seed)");
  subgroup.flags.add(sg, "--epochs", "/train/epochs", Kind::integer, "Training epochs");

  auto* k = app.add_subcommand("kfold", "k-fold cross-validation of one training mode");
  add_common(k, kfold);
  kfold.flags.add(k, "--data", "/data", Kind::text, "Dataset directory");
  kfold.flags.add(k, "--k", "/k", Kind::integer, "Number of folds");
  add_train_flags(k, kfold.flags, "/train");

  auto* p = app.add_subcommand("pfi", "Permutation feature importance of a trained run");
  add_common(p, pfi);
  pfi.flags.add(p, "--run", "/run", Kind::text, "Train run directory");
  pfi.flags.add(p, "--kind", "/kind", Kind::text, "temporal | spatial | spatiotemporal | spectral | kernel");
  pfi.flags.add(p, "--grouping", "/grouping", Kind::text, "single | neighbourhood | colocated");
  pfi.flags.add(p, "--subject", "/subject", Kind::text, "Restrict to one subject (required for subject runs)");
  pfi.flags.add(p, "--window-s", "/pfi/window_s", Kind::real, "Temporal window (s)");
  pfi.flags.add(p, "--neighbourhood-k", "/pfi/neighbourhood_k", Kind::integer, "Channels per neighbourhood");
  pfi.flags.add(p, "--band-hz", "/pfi/band_hz", Kind::real, "Frequency band width (Hz)");
  pfi.flags.add(p, "--repeats", "/pfi/n_repeats", Kind::integer, "Permutation repeats");
  pfi.flags.add(p, "--time-step", "/pfi/time_step", Kind::integer, "Samples between time centers");
  pfi.flags.add(p, "--max-evaluations", "/pfi/max_evaluations", Kind::integer, "Budget for grid analyses");
  pfi.flags.add(p, "--bootstrap-ci", "/pfi/bootstrap_ci", Kind::boolean, "Percentile bootstrap intervals");
  pfi.flags.add(p, "--layer", "/kernel/layer", Kind::integer, "Kernel PFI: layer");
  pfi.flags.add(p, "--kernel", "/kernel/kernel", Kind::integer, "Kernel PFI: kernel index");
  pfi.flags.add(p, "--axis", "/kernel/axis", Kind::text, "Kernel PFI: time | space | freq | space_time | space_freq");
  pfi.flags.add(p, "--standardize", "/kernel/standardize", Kind::boolean, "Kernel PFI: z-score across cells");

  auto* fr = app.add_subcommand("fir", "Frequency response of convolution kernels from white noise");
  add_common(fr, fir);
  fir.flags.add(fr, "--run", "/run", Kind::text, "Train run directory");
  fir.flags.add(fr, "--layer", "/layer", Kind::integer, "Layer index");
  fir.flags.add(fr, "--kernel", "/kernel", Kind::integer, "Kernel index (-1: all kernels of the layer)");
  fir.flags.add(fr, "--noise-trials", "/n_noise_trials", Kind::integer, "White-noise trials");
  fir.flags.add(fr, "--nperseg", "/nperseg", Kind::integer, "Welch segment length (0: automatic)");
  fir.flags.add(fr, "--subject", "/subject", Kind::text, "Subject whose embedding (or model) is used");

  auto* e = app.add_subcommand("embed", "Embedding PCA diagnostics and ablations of a group_emb run");
  add_common(e, embed);
  embed.flags.add(e, "--run", "/run", Kind::text, "group_emb train run directory");
  embed.flags.add(e, "--permutation", "/permutation", Kind::int_list, "Explicit shuffle permutation");

  auto* r = app.add_subcommand("report", "Regenerate tables and figures of a run from its stored results");
  r->add_option("--run", report_run, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    if (ex.get_exit_code() == 0) return app.exit(ex, out, err);
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 2;
  }

  try {
    if (g->parsed()) return cmd_gen(gen, out);
    if (t->parsed()) return cmd_train(train, out);
    if (f->parsed()) return cmd_finetune(ft, out);
    if (l->parsed()) return cmd_loso(loso, out);
    if (sg->parsed()) return cmd_subgroup(subgroup, out);
    if (k->parsed()) return cmd_kfold(kfold, out);
    if (p->parsed()) return cmd_pfi(pfi, out);
    if (fr->parsed()) return cmd_fir(fir, out);
    if (e->parsed()) return cmd_embed(embed, out);
    if (r->parsed()) return cmd_report(report_run, out);
  } catch (const ConfigError& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::string msg = ex.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 1;
  }
  return 2;
}

}  // namespace gdec
