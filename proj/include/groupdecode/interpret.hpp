#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "groupdecode/dataio.hpp"
#include "groupdecode/experiments.hpp"
#include "groupdecode/stats.hpp"

namespace gdec {

struct PfiConfig {
  double window_s = 0.1;
  int neighbourhood_k = 4;
  double band_hz = 5.0;
  int n_repeats = 10;
  std::uint64_t seed = 0;
  /// Samples between consecutive time centers (1 evaluates every timestep).
  int time_step = 1;
  /// Upper bound on cells x repeats x trials for grid analyses.
  std::int64_t max_evaluations = 20'000'000;
  int jobs = 1;
  /// Replace every permutation with the identity; used to check that a perturbation is a no-op.
  bool identity_permutation = false;
  /// Percentile bootstrap instead of Student-t for the intervals over repeats.
  bool bootstrap_ci = false;

  void validate(double sfreq, int n_channels) const;
  int window_samples(double sfreq) const;
};

nlohmann::json to_json(const PfiConfig& c);
PfiConfig pfi_config_from_json(const nlohmann::json& j);

enum class SpatialGrouping { single, neighbourhood, colocated };
std::string to_string(SpatialGrouping g);
SpatialGrouping spatial_grouping_from_string(const std::string& s);

/// One perturbed slice of the input: a set of channels and a span along time or frequency.
struct PfiCell {
  std::string label;
  std::vector<int> channels;
  /// Time window [t0, t1) in samples, or frequency band [lo, hi) in Hz for spectral cells.
  double lo = 0.0;
  double hi = 0.0;
  /// Time center (s) or band center (Hz); NaN when the cell spans the whole axis.
  double center = 0.0;
  /// Representative channel for channel-indexed results (-1 when all channels are involved).
  int channel = -1;
};

struct PfiResult {
  /// time | channel | frequency | channel_time | channel_frequency
  std::string axis;
  /// accuracy_loss | deviation | deviation_z
  std::string metric;
  std::vector<PfiCell> cells;
  /// values[cell][repeat]
  std::vector<std::vector<double>> values;
  /// Baseline accuracy (model PFI) or 0 (kernel PFI).
  double baseline = 0.0;
  /// t | bootstrap
  std::string ci_method = "t";

  double mean(std::size_t cell) const;
  /// 95% interval over repeats; degenerate [mean, mean] for a single repeat.
  stats::Interval interval(std::size_t cell) const;
  std::size_t argmax() const;
};

nlohmann::json to_json(const PfiResult& r);
PfiResult pfi_result_from_json(const nlohmann::json& j);

/// Scores a set of (possibly perturbed) trials aligned with the evaluation set.
using PfiScorer = std::function<double(const std::vector<Trial>& trials)>;
/// Writes the perturbation of one cell into `out` (already a copy of the original trial).
using PfiPerturbation = std::function<void(const PfiCell& cell, Trial& out, Rng& rng)>;

/// Generic engine: for every cell and repeat, perturb every trial with the stream
/// (seed, repeat, trial) and record baseline_score - score (or score when baseline is unused).
PfiResult run_pfi(const ExampleSet& eval, const std::vector<PfiCell>& cells, const PfiPerturbation& perturb,
                  const PfiScorer& score, double baseline, bool loss_from_baseline, const PfiConfig& cfg);

/// Random permutation of [0, n), or the identity when cfg.identity_permutation.
std::vector<int> draw_permutation(int n, Rng& rng, bool identity);

// Perturbations, exposed for property tests.
/// Channel order permuted within columns [t0, t1).
void permute_channels_in_window(Trial& x, int t0, int t1, Rng& rng, bool identity);
/// Time indices within [t0, t1) permuted jointly for the listed channels.
void permute_time_in_rows(Trial& x, const std::vector<int>& channels, int t0, int t1, Rng& rng, bool identity);
struct SpectralShuffleReport {
  /// Largest imaginary part of the complex inverse transform.
  double max_imag = 0.0;
  /// Largest |inverse - original| over the processed samples (the FFT round-trip error under the identity).
  double max_roundtrip_error = 0.0;
};
/// Per channel (all when `channels` is empty), permutes whole complex FFT coefficients among bins
/// whose frequency lies in [lo_hz, hi_hz). DC and Nyquist bins stay fixed; mirrored bins follow
/// the permutation, so the inverse transform is real up to rounding. Under the identity the
/// transform is still computed and measured but the trial is left bit-identical.
SpectralShuffleReport spectral_shuffle(Trial& x, double sfreq, double lo_hz, double hi_hz, Rng& rng, bool identity,
                                       const std::vector<int>& channels = {});

/// Cells for each analysis.
std::vector<PfiCell> temporal_cells(const EpochedDataset& ds, const PfiConfig& cfg);
std::vector<PfiCell> spatial_cells(const EpochedDataset& ds, const PfiConfig& cfg, SpatialGrouping grouping);
std::vector<PfiCell> spectral_cells(const EpochedDataset& ds, const PfiConfig& cfg);
std::vector<PfiCell> spatiotemporal_cells(const EpochedDataset& ds, const PfiConfig& cfg);
std::vector<PfiCell> spatiospectral_cells(const EpochedDataset& ds, const PfiConfig& cfg);

/// Model-level PFI; the metric is baseline accuracy minus permuted accuracy.
PfiResult temporal_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval, const PfiConfig& cfg);
PfiResult spatial_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval, const PfiConfig& cfg,
                      SpatialGrouping grouping = SpatialGrouping::single);
PfiResult spatiotemporal_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval,
                             const PfiConfig& cfg);
PfiResult spectral_pfi(const Model& model, const EpochedDataset& ds, const ExampleSet& eval, const PfiConfig& cfg);

struct KernelRef {
  int layer = 0;
  int kernel = 0;
  void validate(const ModelConfig& cfg) const;
};

/// Activation map (1 x T) of one kernel for one trial, eval mode.
Mat<float> kernel_activation(const Model& model, const KernelRef& ref, const Trial& x, int subject);

enum class KernelAxis { time, space, freq, space_time, space_freq };
std::string to_string(KernelAxis a);
KernelAxis kernel_axis_from_string(const std::string& s);

/// Kernel-level PFI: metric is the mean absolute deviation of the kernel's activation map
/// between original and perturbed inputs. `standardize` z-scores the mean curve across cells.
PfiResult kernel_pfi(const Model& model, const KernelRef& ref, const EpochedDataset& ds, const ExampleSet& eval,
                     const PfiConfig& cfg, KernelAxis axis, bool standardize = false);

struct Psd {
  std::vector<double> freqs;
  std::vector<double> power;
};

/// Averaged Welch periodogram: Hann window, 50% overlap, constant detrend, one-sided density.
Psd welch_psd(std::span<const double> signal, double sfreq, int nperseg);

/// Frequency response of one kernel: white-noise trials through the model, Welch PSD of the
/// kernel's output averaged over trials and normalized to a maximum of 1.
Psd kernel_fir(const Model& model, const KernelRef& ref, int n_noise_trials, std::uint64_t seed, double sfreq,
               int nperseg = 0, int subject = 0);

struct EmbeddingDiagnostics {
  /// Variance of each principal component, descending.
  std::vector<double> variances;
  /// scores[s][k]: subject s on component k.
  std::vector<std::vector<double>> scores;
  std::vector<stats::Correlation> correlations;
  /// All component variances are zero (identical rows).
  bool degenerate = false;
};

/// Centered PCA of the S x E embedding table and Pearson correlation of each component with accuracy.
EmbeddingDiagnostics embedding_diagnostics(const Model& model, const std::vector<double>& accuracies);
EmbeddingDiagnostics embedding_diagnostics(const Mat<double>& table, const std::vector<double>& accuracies);
nlohmann::json to_json(const EmbeddingDiagnostics& d);

}  // namespace gdec
