#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "groupdecode/types.hpp"

namespace gdec {

/// Raised when a dataset directory is inconsistent with its manifest.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChannelLayout {
  std::vector<std::string> channel_ids;
  /// Unitless sensor coordinates in [-1, 1]^2.
  std::vector<std::array<double, 2>> positions;

  std::size_t size() const { return channel_ids.size(); }
  /// Throws std::out_of_range for an unknown id.
  std::size_t index_of(std::string_view id) const;
  void validate() const;

  bool operator==(const ChannelLayout&) const = default;
};

/// Channels placed on concentric rings of eight, staggered between rings.
ChannelLayout ring_layout(int n_channels);

/// The `count` channels closest to a posterior point of the layout (a stand-in for occipital sensors).
std::vector<int> default_info_channels(const ChannelLayout& layout, int count);

/// Channel `ch` followed by its k-1 nearest channels; ties broken by ascending index.
std::vector<int> neighbourhood(const ChannelLayout& layout, int ch, int k);
std::vector<std::string> neighbourhood(const ChannelLayout& layout, std::string_view ch, int k);

/// Groups of channels sharing identical coordinates, in order of first appearance.
std::vector<std::vector<int>> colocated_groups(const ChannelLayout& layout);

struct SubjectTrials {
  std::string id;
  /// by_class[c][i] is trial i of class c.
  std::vector<std::vector<Trial>> by_class;

  /// Exact equality, including trial shapes.
  bool operator==(const SubjectTrials& other) const;
};

struct EpochedDataset {
  std::vector<SubjectTrials> subjects;
  int n_classes = 0;
  double sfreq = 0.0;
  /// Seconds of pre-stimulus baseline at the start of each epoch.
  double t_offset = 0.0;
  ChannelLayout layout;

  int n_subjects() const { return static_cast<int>(subjects.size()); }
  int n_channels() const { return static_cast<int>(layout.size()); }
  int n_timesteps() const;
  int trials_per_class() const;
  std::size_t subject_index(std::string_view id) const;
  /// Seconds relative to stimulus onset of sample `t`.
  double time_of(int t) const { return t / sfreq - t_offset; }

  /// Checks shapes, balance and finiteness; throws std::invalid_argument.
  void validate() const;

  bool operator==(const EpochedDataset& other) const;
};

struct SyntheticSpec {
  int n_subjects = 5;
  int n_classes = 8;
  int trials_per_class = 30;
  int n_channels = 32;
  int n_timesteps = 256;
  double sfreq = 250.0;
  double t_offset = 0.1;
  /// Largest per-subject rotation (radians). Subject angles are spread evenly over
  /// [-angle, angle] in a seeded random order.
  double subject_mixing_angle = 0.8;
  /// Fraction of informative channel pairs rotated by the subject mixing; the rest stay shared
  /// across subjects. Lower values leave common structure for zero-shot transfer.
  double mixed_fraction = 1.0;
  /// Post-stimulus seconds carrying the class templates.
  std::pair<double, double> info_window{0.1, 0.3};
  /// Empty selects default_info_channels(layout, n_channels / 4).
  std::vector<int> info_channels;
  double alpha_hz = 10.0;
  double noise_exponent = 1.0;
  double signal_amplitude = 1.0;
  /// Scales the whole background (1/f plus alpha); zero gives noiseless trials.
  double noise_amplitude = 0.4;
  /// Alpha sinusoid amplitude relative to the 1/f background.
  double alpha_ratio = 0.5;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument with a description of the first violation.
  void validate() const;
  ChannelLayout layout() const;
  std::vector<int> resolved_info_channels() const;
  /// Indices of informative channel pairs (channels 2k, 2k+1 of the resolved list) that are mixed.
  std::vector<int> mixed_pairs() const;
  /// Rotation angle of subject s.
  double subject_angle(int subject) const;
  /// First and last sample (inclusive) of the informative window.
  std::pair<int, int> info_samples() const;

  static SyntheticSpec desk();
};

nlohmann::json to_json(const SyntheticSpec& s);
/// Missing fields keep their defaults; unknown fields are rejected.
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ChannelLayout& layout);
ChannelLayout channel_layout_from_json(const nlohmann::json& j);

/// Noise-free class templates, before subject mixing: one C x T array per class.
std::vector<Trial> class_templates(const SyntheticSpec& spec);

/// Orthonormal C x C mixing matrix of subject s.
Mat<double> subject_mixing(const SyntheticSpec& spec, int subject);

/// Deterministic multi-subject dataset with planted class and subject structure.
EpochedDataset generate_synthetic(const SyntheticSpec& spec);

void write_dataset(const EpochedDataset& ds, const std::filesystem::path& dir);
EpochedDataset read_dataset(const std::filesystem::path& dir);

/// CRC32 over every trial's little-endian float payload, in subject/class/trial order.
std::uint32_t dataset_checksum(const EpochedDataset& ds);

/// CRC32 (zlib polynomial) of a byte buffer.
std::uint32_t crc32(std::span<const unsigned char> bytes);

}  // namespace gdec
