#include "groupdecode/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include <zlib.h>
#include "json.hpp"

#include "groupdecode/fft.hpp"

namespace gdec {
namespace {

using ojson = nlohmann::ordered_json;
constexpr int kFormatVersion = 1;

std::string zero_padded(int value, int width) {
  std::string s = std::to_string(value);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

bool trials_equal(const Trial& a, const Trial& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

// Unit-variance 1/f^exponent background of length n.
std::vector<double> pink_noise(std::size_t n, double exponent, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> white(n);
  for (auto& v : white) v = normal(rng);
  auto spectrum = fft::rfft(white);
  // variance of the shaped signal is the mean of |H|^2 over the full spectrum
  double power = 0.0;
  for (std::size_t k = 0; k < spectrum.size(); ++k) {
    const double gain = k == 0 ? 0.0 : std::pow(static_cast<double>(k), -exponent / 2.0);
    spectrum[k] *= gain;
    const bool self_mirrored = (k == 0) || (n % 2 == 0 && k == n / 2);
    power += (self_mirrored ? 1.0 : 2.0) * gain * gain;
  }
  auto out = fft::irfft(spectrum, n);
  const double scale = power > 0.0 ? 1.0 / std::sqrt(power / static_cast<double>(n)) : 0.0;
  for (auto& v : out) v *= scale;
  return out;
}

void write_floats_le(std::vector<unsigned char>& out, const float* data, std::size_t count) {
  const std::size_t offset = out.size();
  out.resize(offset + count * sizeof(float));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + offset, data, count * sizeof(float));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      auto bits = std::bit_cast<std::uint32_t>(data[i]);
      for (int b = 0; b < 4; ++b) out[offset + i * 4 + static_cast<std::size_t>(b)] = (bits >> (8 * b)) & 0xffu;
    }
  }
}

void read_floats_le(const unsigned char* in, float* data, std::size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(data, in, count * sizeof(float));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(in[i * 4 + static_cast<std::size_t>(b)]) << (8 * b);
      data[i] = std::bit_cast<float>(bits);
    }
  }
}

template <class T>
T required(const ojson& j, const char* field) {
  if (!j.contains(field)) throw FormatError(std::string("manifest missing field '") + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(std::string("manifest field '") + field + "' has the wrong type");
  }
}

std::string subject_file(const std::string& id) { return "sub-" + id + ".f32"; }

}  // namespace

// ---------------------------------------------------------------------------
// Layout

std::size_t ChannelLayout::index_of(std::string_view id) const {
  for (std::size_t i = 0; i < channel_ids.size(); ++i)
    if (channel_ids[i] == id) return i;
  throw std::out_of_range("unknown channel id '" + std::string(id) + "'");
}

void ChannelLayout::validate() const {
  if (positions.size() != channel_ids.size())
    throw std::invalid_argument("layout length mismatch: " + std::to_string(channel_ids.size()) + " ids but " +
                                std::to_string(positions.size()) + " positions");
  std::set<std::string> seen;
  for (const auto& id : channel_ids)
    if (!seen.insert(id).second) throw std::invalid_argument("duplicate channel id '" + id + "'");
  for (const auto& p : positions)
    if (!std::isfinite(p[0]) || !std::isfinite(p[1])) throw std::invalid_argument("non-finite channel position");
}

ChannelLayout ring_layout(int n_channels) {
  if (n_channels < 1) throw std::invalid_argument("ring_layout: n_channels must be positive");
  constexpr int per_ring = 8;
  const int n_rings = (n_channels + per_ring - 1) / per_ring;
  const int width = n_channels > 100 ? 3 : 2;
  ChannelLayout layout;
  int ch = 0;
  for (int r = 0; r < n_rings; ++r) {
    const int on_ring = std::min(per_ring, n_channels - ch);
    const double radius = static_cast<double>(r + 1) / n_rings;
    for (int i = 0; i < on_ring; ++i, ++ch) {
      const double angle = 2.0 * std::numbers::pi * i / on_ring + r * std::numbers::pi / per_ring;
      layout.channel_ids.push_back("ch" + zero_padded(ch, width));
      layout.positions.push_back({radius * std::cos(angle), radius * std::sin(angle)});
    }
  }
  return layout;
}

namespace {

std::vector<int> nearest_to(const ChannelLayout& layout, std::array<double, 2> point, int count) {
  std::vector<int> order(layout.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i)
    dist[i] = std::hypot(layout.positions[i][0] - point[0], layout.positions[i][1] - point[1]);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(count));
  return order;
}

}  // namespace

std::vector<int> default_info_channels(const ChannelLayout& layout, int count) {
  if (count < 1 || count > static_cast<int>(layout.size()))
    throw std::invalid_argument("default_info_channels: count out of range");
  return nearest_to(layout, {0.0, -0.7}, count);
}

std::vector<int> neighbourhood(const ChannelLayout& layout, int ch, int k) {
  if (ch < 0 || ch >= static_cast<int>(layout.size()))
    throw std::out_of_range("unknown channel index " + std::to_string(ch));
  if (k < 1 || k > static_cast<int>(layout.size()))
    throw std::invalid_argument("neighbourhood size k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(layout.size()) + "]");
  auto result = nearest_to(layout, layout.positions[static_cast<std::size_t>(ch)], static_cast<int>(layout.size()));
  // the channel itself is at distance zero but a co-located channel with a lower index would sort first
  std::erase(result, ch);
  result.insert(result.begin(), ch);
  result.resize(static_cast<std::size_t>(k));
  return result;
}

std::vector<std::string> neighbourhood(const ChannelLayout& layout, std::string_view ch, int k) {
  std::vector<std::string> ids;
  for (int i : neighbourhood(layout, static_cast<int>(layout.index_of(ch)), k))
    ids.push_back(layout.channel_ids[static_cast<std::size_t>(i)]);
  return ids;
}

std::vector<std::vector<int>> colocated_groups(const ChannelLayout& layout) {
  std::vector<std::vector<int>> groups;
  std::vector<bool> assigned(layout.size(), false);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (assigned[i]) continue;
    std::vector<int> group{static_cast<int>(i)};
    for (std::size_t j = i + 1; j < layout.size(); ++j) {
      if (!assigned[j] && layout.positions[j] == layout.positions[i]) {
        group.push_back(static_cast<int>(j));
        assigned[j] = true;
      }
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Dataset

bool SubjectTrials::operator==(const SubjectTrials& other) const {
  if (id != other.id || by_class.size() != other.by_class.size()) return false;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].size() != other.by_class[c].size()) return false;
    for (std::size_t i = 0; i < by_class[c].size(); ++i)
      if (!trials_equal(by_class[c][i], other.by_class[c][i])) return false;
  }
  return true;
}

bool EpochedDataset::operator==(const EpochedDataset& other) const {
  return n_classes == other.n_classes && sfreq == other.sfreq && t_offset == other.t_offset &&
         layout == other.layout && subjects == other.subjects;
}

int EpochedDataset::n_timesteps() const {
  if (subjects.empty() || subjects.front().by_class.empty() || subjects.front().by_class.front().empty()) return 0;
  return static_cast<int>(subjects.front().by_class.front().front().cols());
}

int EpochedDataset::trials_per_class() const {
  if (subjects.empty() || subjects.front().by_class.empty()) return 0;
  return static_cast<int>(subjects.front().by_class.front().size());
}

std::size_t EpochedDataset::subject_index(std::string_view id) const {
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].id == id) return i;
  throw std::out_of_range("unknown subject id '" + std::string(id) + "'");
}

void EpochedDataset::validate() const {
  layout.validate();
  if (subjects.empty()) throw std::invalid_argument("dataset has no subjects");
  if (n_classes < 1) throw std::invalid_argument("dataset has no classes");
  if (!(sfreq > 0.0)) throw std::invalid_argument("sampling rate must be positive");
  const int per_class = trials_per_class();
  const int T = n_timesteps();
  const int C = n_channels();
  if (per_class < 1 || T < 1) throw std::invalid_argument("dataset has empty trials");
  std::set<std::string> ids;
  for (const auto& sub : subjects) {
    if (!ids.insert(sub.id).second) throw std::invalid_argument("duplicate subject id '" + sub.id + "'");
    if (static_cast<int>(sub.by_class.size()) != n_classes)
      throw std::invalid_argument("subject " + sub.id + " has " + std::to_string(sub.by_class.size()) +
                                  " classes, expected " + std::to_string(n_classes));
    for (std::size_t c = 0; c < sub.by_class.size(); ++c) {
      if (static_cast<int>(sub.by_class[c].size()) != per_class)
        throw std::invalid_argument("class counts unbalanced: subject " + sub.id + " class " + std::to_string(c) +
                                    " has " + std::to_string(sub.by_class[c].size()) + " trials, expected " +
                                    std::to_string(per_class));
      for (const auto& trial : sub.by_class[c]) {
        if (trial.rows() != C || trial.cols() != T)
          throw std::invalid_argument("trial shape mismatch in subject " + sub.id + ": " +
                                      std::to_string(trial.rows()) + "x" + std::to_string(trial.cols()) +
                                      ", expected " + std::to_string(C) + "x" + std::to_string(T));
        if (!trial.allFinite()) throw std::invalid_argument("non-finite values in subject " + sub.id);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid synthetic spec: " + msg); };
  if (n_subjects < 1) fail("n_subjects must be >= 1");
  if (n_classes < 2) fail("n_classes must be >= 2");
  if (trials_per_class < 1) fail("trials_per_class must be >= 1");
  if (n_channels < 2) fail("n_channels must be >= 2");
  if (n_timesteps < 2) fail("n_timesteps must be >= 2");
  if (!(sfreq > 0.0)) fail("sfreq must be positive");
  if (t_offset < 0.0) fail("t_offset must be non-negative");
  if (!(subject_mixing_angle >= 0.0 && subject_mixing_angle <= std::numbers::pi / 2))
    fail("subject_mixing_angle must lie in [0, pi/2]");
  const double epoch_end = (n_timesteps - 1) / sfreq - t_offset;
  if (!(info_window.first < info_window.second)) fail("info_window start must precede its end");
  if (info_window.first < -t_offset || info_window.second > epoch_end) fail("info_window lies outside the epoch");
  if (!(alpha_hz > 0.0 && alpha_hz < sfreq / 2)) fail("alpha_hz must lie in (0, sfreq/2)");
  if (!(mixed_fraction >= 0.0 && mixed_fraction <= 1.0)) fail("mixed_fraction must lie in [0, 1]");
  if (signal_amplitude < 0.0 || noise_amplitude < 0.0 || alpha_ratio < 0.0) fail("amplitudes must be non-negative");
  std::set<int> seen;
  for (int ch : info_channels) {
    if (ch < 0 || ch >= n_channels) fail("info channel " + std::to_string(ch) + " outside the layout");
    if (!seen.insert(ch).second) fail("duplicate info channel " + std::to_string(ch));
  }
  const auto [s0, s1] = info_samples();
  if (s1 - s0 < 2) fail("info_window spans fewer than three samples");
}

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"n_subjects", s.n_subjects},
          {"n_classes", s.n_classes},
          {"trials_per_class", s.trials_per_class},
          {"n_channels", s.n_channels},
          {"n_timesteps", s.n_timesteps},
          {"sfreq", s.sfreq},
          {"t_offset", s.t_offset},
          {"subject_mixing_angle", s.subject_mixing_angle},
          {"mixed_fraction", s.mixed_fraction},
          {"info_window", {s.info_window.first, s.info_window.second}},
          {"info_channels", s.info_channels},
          {"alpha_hz", s.alpha_hz},
          {"noise_exponent", s.noise_exponent},
          {"signal_amplitude", s.signal_amplitude},
          {"noise_amplitude", s.noise_amplitude},
          {"alpha_ratio", s.alpha_ratio},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("synthetic spec must be a JSON object");
  SyntheticSpec s;
  const auto known = to_json(s);
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw std::invalid_argument("unknown synthetic spec field '" + key + "'");
  try {
    s.n_subjects = j.value("n_subjects", s.n_subjects);
    s.n_classes = j.value("n_classes", s.n_classes);
    s.trials_per_class = j.value("trials_per_class", s.trials_per_class);
    s.n_channels = j.value("n_channels", s.n_channels);
    s.n_timesteps = j.value("n_timesteps", s.n_timesteps);
    s.sfreq = j.value("sfreq", s.sfreq);
    s.t_offset = j.value("t_offset", s.t_offset);
    s.subject_mixing_angle = j.value("subject_mixing_angle", s.subject_mixing_angle);
    s.mixed_fraction = j.value("mixed_fraction", s.mixed_fraction);
    if (j.contains("info_window")) {
      const auto w = j.at("info_window").get<std::vector<double>>();
      if (w.size() != 2) throw std::invalid_argument("info_window must have two entries");
      s.info_window = {w[0], w[1]};
    }
    s.info_channels = j.value("info_channels", s.info_channels);
    s.alpha_hz = j.value("alpha_hz", s.alpha_hz);
    s.noise_exponent = j.value("noise_exponent", s.noise_exponent);
    s.signal_amplitude = j.value("signal_amplitude", s.signal_amplitude);
    s.noise_amplitude = j.value("noise_amplitude", s.noise_amplitude);
    s.alpha_ratio = j.value("alpha_ratio", s.alpha_ratio);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

nlohmann::json to_json(const ChannelLayout& layout) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < layout.size(); ++i)
    j.push_back({{"id", layout.channel_ids[i]}, {"x", layout.positions[i][0]}, {"y", layout.positions[i][1]}});
  return j;
}

ChannelLayout channel_layout_from_json(const nlohmann::json& j) {
  ChannelLayout layout;
  for (const auto& c : j) {
    layout.channel_ids.push_back(c.at("id").get<std::string>());
    layout.positions.push_back({c.at("x").get<double>(), c.at("y").get<double>()});
  }
  layout.validate();
  return layout;
}

ChannelLayout SyntheticSpec::layout() const { return ring_layout(n_channels); }

std::vector<int> SyntheticSpec::resolved_info_channels() const {
  if (!info_channels.empty()) return info_channels;
  return default_info_channels(layout(), std::max(1, n_channels / 4));
}

std::pair<int, int> SyntheticSpec::info_samples() const {
  const auto first = static_cast<int>(std::lround((info_window.first + t_offset) * sfreq));
  const auto last = static_cast<int>(std::lround((info_window.second + t_offset) * sfreq));
  return {first, last};
}

std::vector<int> SyntheticSpec::mixed_pairs() const {
  const int n_pairs = static_cast<int>(resolved_info_channels().size()) / 2;
  std::vector<int> pairs(static_cast<std::size_t>(n_pairs));
  std::iota(pairs.begin(), pairs.end(), 0);
  Rng rng = make_rng(seed, 3, 0);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  const auto n_mixed = static_cast<std::size_t>(std::lround(mixed_fraction * n_pairs));
  pairs.resize(n_mixed);
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

double SyntheticSpec::subject_angle(int subject) const {
  if (n_subjects == 1) return 0.0;
  std::vector<int> rank(static_cast<std::size_t>(n_subjects));
  std::iota(rank.begin(), rank.end(), 0);
  Rng rng = make_rng(seed, 3, 1);
  std::shuffle(rank.begin(), rank.end(), rng);
  const double u = -1.0 + 2.0 * rank[static_cast<std::size_t>(subject)] / (n_subjects - 1);
  return subject_mixing_angle * u;
}

SyntheticSpec SyntheticSpec::desk() { return SyntheticSpec{}; }

std::vector<Trial> class_templates(const SyntheticSpec& spec) {
  spec.validate();
  const auto info = spec.resolved_info_channels();
  const auto [s0, s1] = spec.info_samples();
  const int span = s1 - s0 + 1;
  const std::size_t n_pairs = (info.size() + 1) / 2;

  Rng rng = make_rng(spec.seed, 1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> spatial_offset(n_pairs), temporal_phase(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    spatial_offset[k] = phase(rng);
    temporal_phase[k] = phase(rng);
  }

  std::vector<Trial> templates;
  for (int c = 0; c < spec.n_classes; ++c) {
    Trial tpl = Trial::Zero(spec.n_channels, spec.n_timesteps);
    for (std::size_t k = 0; k < n_pairs; ++k) {
      const double theta = 2.0 * std::numbers::pi * c / spec.n_classes + spatial_offset[k];
      const int a = info[2 * k];
      const int b = 2 * k + 1 < info.size() ? info[2 * k + 1] : -1;
      for (int n = 0; n < span; ++n) {
        const double hann = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * n / (span - 1)));
        const double wave = std::cos(2.0 * std::numbers::pi * spec.alpha_hz * n / spec.sfreq + temporal_phase[k]);
        const double g = spec.signal_amplitude * hann * wave;
        tpl(a, s0 + n) = static_cast<float>(g * std::cos(theta));
        if (b >= 0) tpl(b, s0 + n) = static_cast<float>(g * std::sin(theta));
      }
    }
    templates.push_back(std::move(tpl));
  }
  return templates;
}

Mat<double> subject_mixing(const SyntheticSpec& spec, int subject) {
  if (subject < 0 || subject >= spec.n_subjects) throw std::out_of_range("subject index out of range");
  const auto info = spec.resolved_info_channels();
  Mat<double> m = Mat<double>::Identity(spec.n_channels, spec.n_channels);
  if (spec.subject_mixing_angle == 0.0) return m;
  const auto pairs = spec.mixed_pairs();
  const double angle = spec.subject_angle(subject);
  const double c = std::cos(angle), s = std::sin(angle);
  // one Givens rotation per mixed pair of informative channels, all by the subject's angle
  for (int k : pairs) {
    const int a = info[static_cast<std::size_t>(2 * k)];
    const int b = info[static_cast<std::size_t>(2 * k + 1)];
    m(a, a) = c;
    m(a, b) = -s;
    m(b, a) = s;
    m(b, b) = c;
  }
  return m;
}

EpochedDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto templates = class_templates(spec);
  const auto C = static_cast<std::size_t>(spec.n_channels);
  const auto T = static_cast<std::size_t>(spec.n_timesteps);

  EpochedDataset ds;
  ds.n_classes = spec.n_classes;
  ds.sfreq = spec.sfreq;
  ds.t_offset = spec.t_offset;
  ds.layout = spec.layout();

  for (int s = 0; s < spec.n_subjects; ++s) {
    const Mat<double> mixing = subject_mixing(spec, s);
    SubjectTrials sub;
    sub.id = zero_padded(s + 1, 2);
    sub.by_class.resize(static_cast<std::size_t>(spec.n_classes));
    for (int c = 0; c < spec.n_classes; ++c) {
      for (int i = 0; i < spec.trials_per_class; ++i) {
        Mat<double> x = templates[static_cast<std::size_t>(c)].cast<double>();
        if (spec.noise_amplitude > 0.0) {
          Rng rng = make_rng(spec.seed, 2, s, c, i);
          std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
          const double alpha_amp = spec.noise_amplitude * spec.alpha_ratio;
          for (std::size_t ch = 0; ch < C; ++ch) {
            const auto background = pink_noise(T, spec.noise_exponent, rng);
            const double phi = phase(rng);
            for (std::size_t t = 0; t < T; ++t) {
              x(static_cast<Eigen::Index>(ch), static_cast<Eigen::Index>(t)) +=
                  spec.noise_amplitude * background[t] +
                  alpha_amp * std::sin(2.0 * std::numbers::pi * spec.alpha_hz * static_cast<double>(t) / spec.sfreq + phi);
            }
          }
        }
        sub.by_class[static_cast<std::size_t>(c)].push_back((mixing * x).cast<float>());
      }
    }
    ds.subjects.push_back(std::move(sub));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Directory format

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  constexpr std::size_t chunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += chunk) {
    const auto len = static_cast<uInt>(std::min(chunk, bytes.size() - off));
    crc = ::crc32(crc, bytes.data() + off, len);
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t dataset_checksum(const EpochedDataset& ds) {
  std::vector<unsigned char> payload;
  for (const auto& sub : ds.subjects)
    for (const auto& cls : sub.by_class)
      for (const auto& trial : cls) write_floats_le(payload, trial.data(), static_cast<std::size_t>(trial.size()));
  return crc32(payload);
}

void write_dataset(const EpochedDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);

  ojson manifest;
  manifest["version"] = kFormatVersion;
  manifest["n_subjects"] = ds.n_subjects();
  manifest["n_classes"] = ds.n_classes;
  manifest["trials_per_class"] = ds.trials_per_class();
  manifest["n_channels"] = ds.n_channels();
  manifest["n_timesteps"] = ds.n_timesteps();
  manifest["sfreq"] = ds.sfreq;
  manifest["t_offset"] = ds.t_offset;
  manifest["subjects"] = ojson::array();
  for (const auto& sub : ds.subjects) manifest["subjects"].push_back(sub.id);
  manifest["layout"] = ojson::object();
  for (std::size_t i = 0; i < ds.layout.size(); ++i)
    manifest["layout"][ds.layout.channel_ids[i]] = {ds.layout.positions[i][0], ds.layout.positions[i][1]};
  manifest["files"] = ojson::object();

  for (const auto& sub : ds.subjects) {
    std::vector<unsigned char> payload;
    for (const auto& cls : sub.by_class)
      for (const auto& trial : cls) write_floats_le(payload, trial.data(), static_cast<std::size_t>(trial.size()));
    const std::string name = subject_file(sub.id);
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("failed to write " + (dir / name).string());
    manifest["files"][name] = {{"bytes", payload.size()}, {"crc32", crc32(payload)}};
  }

  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed to write " + (dir / "manifest.json").string());
}

EpochedDataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("cannot open " + (dir / "manifest.json").string());
  ojson manifest;
  try {
    manifest = ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }

  const int version = required<int>(manifest, "version");
  if (version != kFormatVersion) throw FormatError("unsupported manifest version " + std::to_string(version));
  const int n_subjects = required<int>(manifest, "n_subjects");
  const int n_classes = required<int>(manifest, "n_classes");
  const int per_class = required<int>(manifest, "trials_per_class");
  const int C = required<int>(manifest, "n_channels");
  const int T = required<int>(manifest, "n_timesteps");
  if (n_subjects < 1 || n_classes < 1 || per_class < 1 || C < 1 || T < 1)
    throw FormatError("manifest dimensions must be positive");

  EpochedDataset ds;
  ds.n_classes = n_classes;
  ds.sfreq = required<double>(manifest, "sfreq");
  ds.t_offset = required<double>(manifest, "t_offset");

  if (!manifest.contains("layout") || !manifest["layout"].is_object())
    throw FormatError("manifest missing field 'layout'");
  for (const auto& [id, pos] : manifest["layout"].items()) {
    if (!pos.is_array() || pos.size() != 2) throw FormatError("layout entry '" + id + "' is not an [x, y] pair");
    ds.layout.channel_ids.push_back(id);
    ds.layout.positions.push_back({pos[0].get<double>(), pos[1].get<double>()});
  }
  if (static_cast<int>(ds.layout.size()) != C)
    throw FormatError("layout length mismatch: manifest n_channels=" + std::to_string(C) + " but layout has " +
                      std::to_string(ds.layout.size()) + " entries");

  const auto ids = required<std::vector<std::string>>(manifest, "subjects");
  if (static_cast<int>(ids.size()) != n_subjects)
    throw FormatError("subject count mismatch: manifest n_subjects=" + std::to_string(n_subjects) + " but " +
                      std::to_string(ids.size()) + " subject ids listed");
  if (!manifest.contains("files") || !manifest["files"].is_object()) throw FormatError("manifest missing field 'files'");

  const std::size_t trial_floats = static_cast<std::size_t>(C) * static_cast<std::size_t>(T);
  const std::size_t expected_bytes =
      static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(per_class) * trial_floats * sizeof(float);

  for (const auto& id : ids) {
    const std::string name = subject_file(id);
    if (!manifest["files"].contains(name)) throw FormatError("manifest has no file entry for " + name);
    const auto& entry = manifest["files"][name];
    const auto declared_bytes = required<std::size_t>(entry, "bytes");
    const auto declared_crc = required<std::uint32_t>(entry, "crc32");

    std::ifstream f(dir / name, std::ios::binary);
    if (!f) throw FormatError("cannot open payload " + (dir / name).string());
    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (payload.size() != expected_bytes || declared_bytes != expected_bytes)
      throw FormatError("payload size mismatch for " + name + ": shape implies " + std::to_string(expected_bytes) +
                        " bytes, manifest declares " + std::to_string(declared_bytes) + ", file has " +
                        std::to_string(payload.size()));
    if (crc32(payload) != declared_crc) throw FormatError("checksum mismatch for " + name);

    SubjectTrials sub;
    sub.id = id;
    sub.by_class.resize(static_cast<std::size_t>(n_classes));
    const unsigned char* cursor = payload.data();
    for (auto& cls : sub.by_class) {
      for (int i = 0; i < per_class; ++i) {
        Trial trial(C, T);
        read_floats_le(cursor, trial.data(), trial_floats);
        cursor += trial_floats * sizeof(float);
        cls.push_back(std::move(trial));
      }
    }
    ds.subjects.push_back(std::move(sub));
  }

  try {
    ds.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return ds;
}

}  // namespace gdec
