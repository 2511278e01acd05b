#include "groupdecode/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "groupdecode/fft.hpp"
#include "groupdecode/parallel.hpp"

namespace gdec {

void PfiConfig::validate(double sfreq, int n_channels) const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid PFI config: " + msg); };
  if (!(window_s * sfreq >= 1.0)) fail("window_s * sfreq must be >= 1");
  if (neighbourhood_k < 1 || neighbourhood_k > n_channels)
    fail("neighbourhood_k=" + std::to_string(neighbourhood_k) + " outside [1, " + std::to_string(n_channels) + "]");
  if (!(band_hz > 0.0)) fail("band_hz must be positive");
  if (n_repeats < 1) fail("n_repeats must be >= 1");
  if (time_step < 1) fail("time_step must be >= 1");
  if (max_evaluations < 1) fail("max_evaluations must be >= 1");
  if (jobs < 1) fail("jobs must be >= 1");
}

int PfiConfig::window_samples(double sfreq) const { return static_cast<int>(std::lround(window_s * sfreq)); }

nlohmann::json to_json(const PfiConfig& c) {
  return {{"window_s", c.window_s},   {"neighbourhood_k", c.neighbourhood_k},
          {"band_hz", c.band_hz},     {"n_repeats", c.n_repeats},
          {"seed", c.seed},           {"time_step", c.time_step},
          {"max_evaluations", c.max_evaluations}, {"bootstrap_ci", c.bootstrap_ci}};
}

PfiConfig pfi_config_from_json(const nlohmann::json& j) {
  PfiConfig c;
  c.window_s = j.value("window_s", c.window_s);
  c.neighbourhood_k = j.value("neighbourhood_k", c.neighbourhood_k);
  c.band_hz = j.value("band_hz", c.band_hz);
  c.n_repeats = j.value("n_repeats", c.n_repeats);
  c.seed = j.value("seed", c.seed);
  c.time_step = j.value("time_step", c.time_step);
  c.max_evaluations = j.value("max_evaluations", c.max_evaluations);
  c.bootstrap_ci = j.value("bootstrap_ci", c.bootstrap_ci);
  return c;
}

std::string to_string(SpatialGrouping g) {
  switch (g) {
    case SpatialGrouping::single: return "single";
    case SpatialGrouping::neighbourhood: return "neighbourhood";
    case SpatialGrouping::colocated: return "colocated";
  }
  return "single";
}

SpatialGrouping spatial_grouping_from_string(const std::string& s) {
  if (s == "single") return SpatialGrouping::single;
  if (s == "neighbourhood" || s == "neighborhood") return SpatialGrouping::neighbourhood;
  if (s == "colocated") return SpatialGrouping::colocated;
  throw std::invalid_argument("unknown spatial grouping '" + s + "' (expected single, neighbourhood or colocated)");
}

double PfiResult::mean(std::size_t cell) const { return stats::mean(values.at(cell)); }

stats::Interval PfiResult::interval(std::size_t cell) const {
  const auto& v = values.at(cell);
  if (v.size() < 2) return {v.front(), v.front()};
  if (ci_method == "bootstrap") return stats::bootstrap_interval(v, 0.95, 2000, 0);
  return stats::confidence_interval(v, 0.95);
}

std::size_t PfiResult::argmax() const {
  if (values.empty()) throw std::logic_error("empty PFI result");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (mean(i) > mean(best)) best = i;
  return best;
}

nlohmann::json to_json(const PfiResult& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    const auto ci = r.interval(i);
    cells.push_back({{"label", c.label},
                     {"channels", c.channels},
                     {"lo", c.lo},
                     {"hi", c.hi},
                     {"center", c.center},
                     {"channel", c.channel},
                     {"values", r.values[i]},
                     {"mean", r.mean(i)},
                     {"ci", {ci.lo, ci.hi}}});
  }
  return {{"axis", r.axis}, {"metric", r.metric}, {"baseline", r.baseline}, {"ci_method", r.ci_method}, {"cells", cells}};
}

PfiResult pfi_result_from_json(const nlohmann::json& j) {
  PfiResult r;
  r.axis = j.at("axis").get<std::string>();
  r.metric = j.at("metric").get<std::string>();
  r.baseline = j.at("baseline").get<double>();
  r.ci_method = j.value("ci_method", std::string("t"));
  for (const auto& c : j.at("cells")) {
    PfiCell cell;
    cell.label = c.at("label").get<std::string>();
    cell.channels = c.at("channels").get<std::vector<int>>();
    cell.lo = c.at("lo").get<double>();
    cell.hi = c.at("hi").get<double>();
    // NaN centers are stored as null
    cell.center = c.at("center").is_null() ? std::numeric_limits<double>::quiet_NaN() : c.at("center").get<double>();
    cell.channel = c.at("channel").get<int>();
    r.cells.push_back(std::move(cell));
    r.values.push_back(c.at("values").get<std::vector<double>>());
  }
  return r;
}

std::vector<int> draw_permutation(int n, Rng& rng, bool identity) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  if (!identity) std::shuffle(p.begin(), p.end(), rng);
  return p;
}

void permute_channels_in_window(Trial& x, int t0, int t1, Rng& rng, bool identity) {
  const auto perm = draw_permutation(static_cast<int>(x.rows()), rng, identity);
  if (identity) return;
  const Trial block = x.middleCols(t0, t1 - t0);
  for (Eigen::Index ch = 0; ch < x.rows(); ++ch)
    x.row(ch).segment(t0, t1 - t0) = block.row(perm[static_cast<std::size_t>(ch)]);
}

void permute_time_in_rows(Trial& x, const std::vector<int>& channels, int t0, int t1, Rng& rng, bool identity) {
  const auto perm = draw_permutation(t1 - t0, rng, identity);
  if (identity) return;
  for (int ch : channels) {
    const Eigen::Matrix<float, 1, Eigen::Dynamic> row = x.row(ch).segment(t0, t1 - t0);
    for (int j = 0; j < t1 - t0; ++j) x(ch, t0 + j) = row(perm[static_cast<std::size_t>(j)]);
  }
}

SpectralShuffleReport spectral_shuffle(Trial& x, double sfreq, double lo_hz, double hi_hz, Rng& rng, bool identity,
                                       const std::vector<int>& channels) {
  const auto n = static_cast<std::size_t>(x.cols());
  std::vector<std::size_t> bins;
  // bins with a conjugate partner only; DC and Nyquist must stay real
  for (std::size_t k = 1; 2 * k < n; ++k) {
    const double f = fft::bin_frequency(k, n, sfreq);
    if (f >= lo_hz && f < hi_hz) bins.push_back(k);
  }
  std::vector<int> rows = channels;
  if (rows.empty()) {
    rows.resize(static_cast<std::size_t>(x.rows()));
    std::iota(rows.begin(), rows.end(), 0);
  }
  SpectralShuffleReport report;
  std::vector<fft::Complex> signal(n);
  for (int ch : rows) {
    for (std::size_t t = 0; t < n; ++t) signal[t] = {static_cast<double>(x(ch, static_cast<Eigen::Index>(t))), 0.0};
    auto spectrum = fft::forward(signal);
    const auto perm = draw_permutation(static_cast<int>(bins.size()), rng, identity);
    const auto original = spectrum;
    for (std::size_t i = 0; i < bins.size(); ++i) {
      const std::size_t k = bins[i];
      spectrum[k] = original[bins[static_cast<std::size_t>(perm[i])]];
      spectrum[n - k] = std::conj(spectrum[k]);
    }
    const auto back = fft::inverse(spectrum);
    for (std::size_t t = 0; t < n; ++t) {
      report.max_imag = std::max(report.max_imag, std::abs(back[t].imag()));
      report.max_roundtrip_error = std::max(report.max_roundtrip_error, std::abs(back[t].real() - signal[t].real()));
      // the identity keeps the original bits so that identity PFI is exactly zero
      if (!identity) x(ch, static_cast<Eigen::Index>(t)) = static_cast<float>(back[t].real());
    }
  }
  return report;
}

PfiResult run_pfi(const ExampleSet& eval, const std::vector<PfiCell>& cells, const PfiPerturbation& perturb,
                  const PfiScorer& score, double baseline, bool loss_from_baseline, const PfiConfig& cfg) {
  if (eval.size() == 0) throw std::invalid_argument("PFI needs a non-empty evaluation set");
  if (cfg.n_repeats < 1) throw std::invalid_argument("PFI needs n_repeats >= 1");
  PfiResult r;
  r.cells = cells;
  r.baseline = baseline;
  r.ci_method = cfg.bootstrap_ci ? "bootstrap" : "t";
  const auto R = static_cast<std::size_t>(cfg.n_repeats);
  r.values.assign(cells.size(), std::vector<double>(R, 0.0));
  const int items = static_cast<int>(cells.size() * R);
  parallel_for(items, cfg.jobs, [&](int item) {
    const auto c = static_cast<std::size_t>(item) / R;
    const auto rep = static_cast<std::size_t>(item) % R;
    std::vector<Trial> trials(eval.size());
    for (std::size_t i = 0; i < eval.size(); ++i) {
      trials[i] = *eval.inputs[i];
      Rng rng = make_rng(cfg.seed, rep, i);
      perturb(cells[c], trials[i], rng);
    }
    const double s = score(trials);
    r.values[c][rep] = loss_from_baseline ? baseline - s : s;
  });
  return r;
}

namespace {

std::vector<int> all_channels(const EpochedDataset& ds) {
  std::vector<int> ch(static_cast<std::size_t>(ds.n_channels()));
  std::iota(ch.begin(), ch.end(), 0);
  return ch;
}

std::string fixed(double v, int digits) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

struct Window {
  int t0;
  int t1;
};

std::vector<std::pair<int, Window>> time_windows(const EpochedDataset& ds, const PfiConfig& cfg) {
  const int T = ds.n_timesteps();
  const int w = cfg.window_samples(ds.sfreq);
  if (w > T) throw std::invalid_argument("PFI window of " + std::to_string(w) + " samples exceeds the epoch length " +
                                         std::to_string(T));
  std::vector<std::pair<int, Window>> out;
  for (int t = 0; t < T; t += cfg.time_step) {
    const int start = t - w / 2;
    out.push_back({t, {std::max(0, start), std::min(T, start + w)}});
  }
  return out;
}

struct Band {
  double lo, hi, center;
};

std::vector<Band> bands(const EpochedDataset& ds, const PfiConfig& cfg) {
  const double nyquist = ds.sfreq / 2.0;
  if (cfg.band_hz > nyquist) throw std::invalid_argument("band width " + std::to_string(cfg.band_hz) +
                                                         " Hz lies outside the Nyquist frequency " +
                                                         std::to_string(nyquist) + " Hz");
  std::vector<Band> out;
  for (int k = 0; k * cfg.band_hz <= nyquist; ++k) {
    const double c = k * cfg.band_hz;
    out.push_back({std::max(0.0, c - cfg.band_hz / 2), std::min(nyquist + 1e-9, c + cfg.band_hz / 2), c});
  }
  return out;
}

}  // namespace

std::vector<PfiCell> temporal_cells(const EpochedDataset& ds, const PfiConfig& cfg) {
  cfg.validate(ds.sfreq, ds.n_channels());
  std::vector<PfiCell> cells;
  for (const auto& [t, win] : time_windows(ds, cfg)) {
    const double center = ds.time_of(t);
    cells.push_back({"t=" + fixed(center, 3), all_channels(ds), static_cast<double>(win.t0),
                     static_cast<double>(win.t1), center, -1});
  }
  return cells;
}

std::vector<PfiCell> spatial_cells(const EpochedDataset& ds, const PfiConfig& cfg, SpatialGrouping grouping) {
  cfg.validate(ds.sfreq, ds.n_channels());
  const double T = ds.n_timesteps();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<PfiCell> cells;
  switch (grouping) {
    case SpatialGrouping::single:
      for (int ch = 0; ch < ds.n_channels(); ++ch)
        cells.push_back({ds.layout.channel_ids[static_cast<std::size_t>(ch)], {ch}, 0.0, T, nan, ch});
      break;
    case SpatialGrouping::neighbourhood:
      for (int ch = 0; ch < ds.n_channels(); ++ch)
        cells.push_back({ds.layout.channel_ids[static_cast<std::size_t>(ch)],
                         neighbourhood(ds.layout, ch, cfg.neighbourhood_k), 0.0, T, nan, ch});
      break;
    case SpatialGrouping::colocated:
      for (const auto& group : colocated_groups(ds.layout)) {
        std::string label;
        for (int ch : group) label += (label.empty() ? "" : "+") + ds.layout.channel_ids[static_cast<std::size_t>(ch)];
        cells.push_back({label, group, 0.0, T, nan, group.front()});
      }
      break;
  }
  return cells;
}

std::vector<PfiCell> spectral_cells(const EpochedDataset& ds, const PfiConfig& cfg) {
  cfg.validate(ds.sfreq, ds.n_channels());
  std::vector<PfiCell> cells;
  for (const auto& b : bands(ds, cfg))
    cells.push_back({"f=" + fixed(b.center, 1), all_channels(ds), b.lo, b.hi, b.center, -1});
  return cells;
}

std::vector<PfiCell> spatiotemporal_cells(const EpochedDataset& ds, const PfiConfig& cfg) {
  cfg.validate(ds.sfreq, ds.n_channels());
  const auto windows = time_windows(ds, cfg);
  std::vector<PfiCell> cells;
  for (int ch = 0; ch < ds.n_channels(); ++ch) {
    const auto group = neighbourhood(ds.layout, ch, cfg.neighbourhood_k);
    for (const auto& [t, win] : windows) {
      const double center = ds.time_of(t);
      cells.push_back({ds.layout.channel_ids[static_cast<std::size_t>(ch)] + "@" + fixed(center, 3), group,
                       static_cast<double>(win.t0), static_cast<double>(win.t1), center, ch});
    }
  }
  return cells;
}

std::vector<PfiCell> spatiospectral_cells(const EpochedDataset& ds, const PfiConfig& cfg) {
  cfg.validate(ds.sfreq, ds.n_channels());
  const auto bs = bands(ds, cfg);
  std::vector<PfiCell> cells;
  for (int ch = 0; ch < ds.n_channels(); ++ch) {
    const auto group = neighbourhood(ds.layout, ch, cfg.neighbourhood_k);
    for (const auto& b : bs)
      cells.push_back({ds.layout.channel_ids[static_cast<std::size_t>(ch)] + "@" + fixed(b.center, 1) + "Hz", group,
                       b.lo, b.hi, b.center, ch});
  }
  return cells;
}

namespace {

PfiPerturbation window_channel_shuffle(const PfiConfig& cfg) {
  return [identity = cfg.identity_permutation](const PfiCell& c, Trial& x, Rng& rng) {
    permute_channels_in_window(x, static_cast<int>(c.lo), static_cast<int>(c.hi), rng, identity);
  };
}

PfiPerturbation row_time_shuffle(const PfiConfig& cfg) {
  return [identity = cfg.identity_permutation](const PfiCell& c, Trial& x, Rng& rng) {
    permute_time_in_rows(x, c.channels, static_cast<int>(c.lo), static_cast<int>(c.hi), rng, identity);
  };
}

PfiPerturbation band_shuffle(const PfiConfig& cfg, double sfreq, bool restrict_channels) {
  return [identity = cfg.identity_permutation, sfreq, restrict_channels](const PfiCell& c, Trial& x, Rng& rng) {
    spectral_shuffle(x, sfreq, c.lo, c.hi, rng, identity, restrict_channels ? c.channels : std::vector<int>{});
  };
}

PfiScorer accuracy_scorer(const Model& model, const ExampleSet& eval) {
  return [&model, &eval](const std::vector<Trial>& trials) {
    ExampleSet set;
    set.subjects = eval.subjects;
    set.labels = eval.labels;
    for (const auto& t : trials) set.inputs.push_back(&t);
    return evaluate(model, set).accuracy;
  };
}

void check_shapes(const Model& model, const EpochedDataset& ds) {
  const auto& cfg = model.config();
  if (cfg.n_input_channels != ds.n_channels() || cfg.n_timesteps != ds.n_timesteps())
    throw std::invalid_argument("model input shape does not match the dataset");
}

PfiResult model_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval, const PfiConfig& cfg,
                    const std::vector<PfiCell>& cells, const PfiPerturbation& perturb, const std::string& axis) {
  check_shapes(model, ds);
  const double baseline = evaluate(model, eval).accuracy;
  auto r = run_pfi(eval, cells, perturb, accuracy_scorer(model, eval), baseline, true, cfg);
  r.axis = axis;
  r.metric = "accuracy_loss";
  return r;
}

void check_budget(std::size_t cells, const PfiConfig& cfg, std::size_t trials) {
  const auto need = static_cast<double>(cells) * cfg.n_repeats * static_cast<double>(trials);
  if (need > static_cast<double>(cfg.max_evaluations))
    throw std::invalid_argument("grid needs " + std::to_string(static_cast<std::int64_t>(need)) +
                                " trial evaluations, budget is " + std::to_string(cfg.max_evaluations) +
                                "; raise time_step or max_evaluations");
}

}  // namespace

PfiResult temporal_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval, const PfiConfig& cfg) {
  return model_pfi(model, ds, eval, cfg, temporal_cells(ds, cfg), window_channel_shuffle(cfg), "time");
}

PfiResult spatial_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval, const PfiConfig& cfg,
                      SpatialGrouping grouping) {
  return model_pfi(model, ds, eval, cfg, spatial_cells(ds, cfg, grouping), row_time_shuffle(cfg), "channel");
}

PfiResult spatiotemporal_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval,
                             const PfiConfig& cfg) {
  auto cells = spatiotemporal_cells(ds, cfg);
  check_budget(cells.size(), cfg, eval.size());
  return model_pfi(model, ds, eval, cfg, cells, row_time_shuffle(cfg), "channel_time");
}

PfiResult spectral_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval, const PfiConfig& cfg) {
  return model_pfi(model, ds, eval, cfg, spectral_cells(ds, cfg), band_shuffle(cfg, ds.sfreq, false), "frequency");
}

void KernelRef::validate(const ModelConfig& cfg) const {
  if (layer < 0 || layer >= cfg.n_conv_layers)
    throw std::out_of_range("kernel layer " + std::to_string(layer) + " outside [0, " +
                            std::to_string(cfg.n_conv_layers) + ")");
  if (kernel < 0 || kernel >= cfg.hidden_channels)
    throw std::out_of_range("kernel index " + std::to_string(kernel) + " outside [0, " +
                            std::to_string(cfg.hidden_channels) + ")");
}

Mat<float> kernel_activation(const Model& model, const KernelRef& ref, const Trial& x, int subject) {
  ref.validate(model.config());
  const auto acts = model.conv_activations(x, model.has_embeddings() ? subject : 0, ref.layer);
  return acts[static_cast<std::size_t>(ref.layer)].row(ref.kernel);
}

std::string to_string(KernelAxis a) {
  switch (a) {
    case KernelAxis::time: return "time";
    case KernelAxis::space: return "space";
    case KernelAxis::freq: return "freq";
    case KernelAxis::space_time: return "space_time";
    case KernelAxis::space_freq: return "space_freq";
  }
  return "time";
}

KernelAxis kernel_axis_from_string(const std::string& s) {
  if (s == "time") return KernelAxis::time;
  if (s == "space") return KernelAxis::space;
  if (s == "freq") return KernelAxis::freq;
  if (s == "space_time" || s == "space-time") return KernelAxis::space_time;
  if (s == "space_freq" || s == "space-freq") return KernelAxis::space_freq;
  throw std::invalid_argument("unknown kernel PFI axis '" + s + "'");
}

PfiResult kernel_pfi(const Model& model, const KernelRef& ref, const EpochedDataset& ds, const ExampleSet& eval,
                     const PfiConfig& cfg, KernelAxis axis, bool standardize) {
  check_shapes(model, ds);
  ref.validate(model.config());
  std::vector<PfiCell> cells;
  PfiPerturbation perturb;
  std::string axis_name;
  switch (axis) {
    case KernelAxis::time:
      cells = temporal_cells(ds, cfg);
      perturb = window_channel_shuffle(cfg);
      axis_name = "time";
      break;
    case KernelAxis::space:
      cells = spatial_cells(ds, cfg, SpatialGrouping::single);
      perturb = row_time_shuffle(cfg);
      axis_name = "channel";
      break;
    case KernelAxis::freq:
      cells = spectral_cells(ds, cfg);
      perturb = band_shuffle(cfg, ds.sfreq, false);
      axis_name = "frequency";
      break;
    case KernelAxis::space_time:
      cells = spatiotemporal_cells(ds, cfg);
      perturb = row_time_shuffle(cfg);
      axis_name = "channel_time";
      break;
    case KernelAxis::space_freq:
      cells = spatiospectral_cells(ds, cfg);
      perturb = band_shuffle(cfg, ds.sfreq, true);
      axis_name = "channel_frequency";
      break;
  }
  if (axis == KernelAxis::space_time || axis == KernelAxis::space_freq) check_budget(cells.size(), cfg, eval.size());

  std::vector<Mat<float>> original(eval.size());
  for (std::size_t i = 0; i < eval.size(); ++i)
    original[i] = kernel_activation(model, ref, *eval.inputs[i], eval.subjects[i]);
  PfiScorer score = [&](const std::vector<Trial>& trials) {
    double sum = 0.0;
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const Mat<float> a = kernel_activation(model, ref, trials[i], eval.subjects[i]);
      sum += (a - original[i]).cwiseAbs().template cast<double>().mean();
    }
    return sum / static_cast<double>(trials.size());
  };
  auto r = run_pfi(eval, cells, perturb, score, 0.0, false, cfg);
  r.axis = axis_name;
  r.metric = "deviation";
  if (standardize && r.cells.size() > 1) {
    std::vector<double> means(r.cells.size());
    for (std::size_t c = 0; c < r.cells.size(); ++c) means[c] = r.mean(c);
    const double m = stats::mean(means);
    const double sd = stats::sample_sd(means);
    if (sd > 0.0) {
      for (auto& row : r.values)
        for (auto& v : row) v = (v - m) / sd;
    }
    r.metric = "deviation_z";
  }
  return r;
}

Psd welch_psd(std::span<const double> signal, double sfreq, int nperseg) {
  const auto n = static_cast<int>(signal.size());
  if (nperseg < 2 || nperseg > n)
    throw std::invalid_argument("Welch segment length " + std::to_string(nperseg) + " outside [2, " +
                                std::to_string(n) + "]");
  const int step = nperseg / 2;
  std::vector<double> window(static_cast<std::size_t>(nperseg));
  double w2 = 0.0;
  for (int i = 0; i < nperseg; ++i) {
    // periodic Hann, as used for spectral estimation
    window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / nperseg);
    w2 += window[static_cast<std::size_t>(i)] * window[static_cast<std::size_t>(i)];
  }
  const std::size_t bins = static_cast<std::size_t>(nperseg / 2 + 1);
  Psd psd;
  psd.freqs.resize(bins);
  psd.power.assign(bins, 0.0);
  for (std::size_t k = 0; k < bins; ++k) psd.freqs[k] = fft::bin_frequency(k, static_cast<std::size_t>(nperseg), sfreq);
  int segments = 0;
  std::vector<double> seg(static_cast<std::size_t>(nperseg));
  for (int start = 0; start + nperseg <= n; start += step) {
    double mean = 0.0;
    for (int i = 0; i < nperseg; ++i) mean += signal[static_cast<std::size_t>(start + i)];
    mean /= nperseg;
    for (int i = 0; i < nperseg; ++i)
      seg[static_cast<std::size_t>(i)] =
          (signal[static_cast<std::size_t>(start + i)] - mean) * window[static_cast<std::size_t>(i)];
    const auto X = fft::rfft(seg);
    for (std::size_t k = 0; k < bins; ++k) psd.power[k] += std::norm(X[k]);
    ++segments;
  }
  const double scale = 1.0 / (sfreq * w2 * segments);
  for (std::size_t k = 0; k < bins; ++k) {
    const bool edge = k == 0 || (nperseg % 2 == 0 && k == bins - 1);
    psd.power[k] *= scale * (edge ? 1.0 : 2.0);
  }
  return psd;
}

Psd kernel_fir(const Model& model, const KernelRef& ref, int n_noise_trials, std::uint64_t seed, double sfreq,
               int nperseg, int subject) {
  if (n_noise_trials < 1) throw std::invalid_argument("kernel FIR needs at least one noise trial");
  ref.validate(model.config());
  const int C = model.config().n_input_channels;
  const int T = model.config().n_timesteps;
  if (nperseg == 0) nperseg = std::min(T, 128);
  Psd total;
  for (int i = 0; i < n_noise_trials; ++i) {
    Rng rng = make_rng(seed, 600, i);
    std::normal_distribution<double> normal(0.0, 1.0);
    Trial x(C, T);
    for (Eigen::Index j = 0; j < x.size(); ++j) x.data()[j] = static_cast<float>(normal(rng));
    const Mat<float> a = kernel_activation(model, ref, x, subject);
    std::vector<double> sig(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) sig[static_cast<std::size_t>(t)] = a(0, t);
    auto psd = welch_psd(sig, sfreq, nperseg);
    if (total.power.empty()) {
      total = std::move(psd);
    } else {
      for (std::size_t k = 0; k < total.power.size(); ++k) total.power[k] += psd.power[k];
    }
  }
  const double peak = *std::max_element(total.power.begin(), total.power.end());
  if (peak > 0.0)
    for (auto& p : total.power) p /= peak;
  return total;
}

EmbeddingDiagnostics embedding_diagnostics(const Model& model, const std::vector<double>& accuracies) {
  if (!model.has_embeddings()) throw std::invalid_argument("embedding diagnostics require a model with E > 0");
  return embedding_diagnostics(model.embeddings().cast<double>(), accuracies);
}

EmbeddingDiagnostics embedding_diagnostics(const Mat<double>& table, const std::vector<double>& accuracies) {
  const auto S = table.rows();
  if (S < 3) throw std::invalid_argument("embedding diagnostics need at least 3 subjects, got " + std::to_string(S));
  if (static_cast<Eigen::Index>(accuracies.size()) != S)
    throw std::invalid_argument("accuracy vector length does not match the embedding table");
  const Mat<double> centered = table.rowwise() - table.colwise().mean();
  const Mat<double> cov = centered.transpose() * centered / static_cast<double>(S - 1);
  Eigen::SelfAdjointEigenSolver<Mat<double>> eig(cov);
  const auto E = table.cols();
  const Eigen::Index K = std::min<Eigen::Index>(E, S);
  EmbeddingDiagnostics d;
  double largest = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::Index idx = E - 1 - k;  // eigenvalues ascend
    const double var = std::max(0.0, eig.eigenvalues()(idx));
    largest = std::max(largest, var);
    d.variances.push_back(var);
  }
  d.degenerate = largest <= 1e-24;
  d.scores.assign(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(K), 0.0));
  for (Eigen::Index k = 0; k < K; ++k) {
    std::vector<double> component(static_cast<std::size_t>(S));
    if (!d.degenerate) {
      const Vec<double> v = eig.eigenvectors().col(E - 1 - k);
      const Vec<double> scores = centered * v;
      for (Eigen::Index s = 0; s < S; ++s) component[static_cast<std::size_t>(s)] = scores(s);
    }
    for (Eigen::Index s = 0; s < S; ++s) d.scores[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)] = component[static_cast<std::size_t>(s)];
    stats::Correlation c{0.0, 1.0, static_cast<int>(S)};
    if (d.variances[static_cast<std::size_t>(k)] > 1e-24 * std::max(1.0, largest)) {
      try {
        c = stats::pearson_r(component, accuracies);
      } catch (const std::invalid_argument&) {
        // constant accuracies leave the correlation undefined
      }
    }
    d.correlations.push_back(c);
  }
  return d;
}

nlohmann::json to_json(const EmbeddingDiagnostics& d) {
  nlohmann::json corr = nlohmann::json::array();
  for (const auto& c : d.correlations) corr.push_back({{"r", c.r}, {"p", c.p}, {"n", c.n}});
  return {{"variances", d.variances}, {"scores", d.scores}, {"correlations", corr}, {"degenerate", d.degenerate}};
}

}  // namespace gdec
