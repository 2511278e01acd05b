#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"

#include "groupdecode/dataio.hpp"
#include "test_util.hpp"

using namespace gdec;
using gdec::testing::TempDir;

namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.n_subjects = 2;
  s.n_classes = 3;
  s.trials_per_class = 5;
  s.n_channels = 12;
  s.n_timesteps = 64;
  s.t_offset = 0.0;
  s.info_window = {0.0, 0.1};
  s.seed = seed;
  return s;
}

ChannelLayout line_layout() {
  ChannelLayout l;
  for (int i = 0; i < 4; ++i) {
    l.channel_ids.push_back("c" + std::to_string(i));
    l.positions.push_back({-0.9 + 0.6 * i, 0.0});
  }
  return l;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST_CASE("ring layout has unique ids and bounded positions") {
  auto l = ring_layout(32);
  REQUIRE(l.size() == 32);
  CHECK(l.channel_ids.front() == "ch00");
  CHECK(l.channel_ids.back() == "ch31");
  std::set<std::string> ids(l.channel_ids.begin(), l.channel_ids.end());
  CHECK(ids.size() == 32);
  for (const auto& p : l.positions) CHECK(std::hypot(p[0], p[1]) <= 1.0 + 1e-12);
  CHECK_NOTHROW(l.validate());
  CHECK(l.index_of("ch07") == 7);
  CHECK_THROWS_AS(l.index_of("nope"), std::out_of_range);
}

TEST_CASE("neighbourhood examples") {
  auto l = ring_layout(32);
  CHECK(neighbourhood(l, 5, 1) == std::vector<int>{5});
  CHECK(neighbourhood(l, "ch05", 1) == std::vector<std::string>{"ch05"});

  // equidistant points on a line: ties resolved by ascending index
  auto line = line_layout();
  CHECK(neighbourhood(line, 1, 4) == std::vector<int>{1, 0, 2, 3});
  CHECK(neighbourhood(line, 0, 4) == std::vector<int>{0, 1, 2, 3});
  CHECK(neighbourhood(line, 3, 2) == std::vector<int>{3, 2});

  CHECK_THROWS_AS(neighbourhood(l, "zz", 2), std::out_of_range);
  CHECK_THROWS(neighbourhood(l, 0, 33));
  CHECK_THROWS(neighbourhood(l, 0, 0));
}

TEST_CASE("neighbourhood always holds the channel and k distinct members") {
  auto l = ring_layout(40);
  for (int ch = 0; ch < 40; ++ch)
    for (int k : {1, 2, 4, 9, 40}) {
      auto nb = neighbourhood(l, ch, k);
      REQUIRE(nb.size() == static_cast<std::size_t>(k));
      CHECK(nb.front() == ch);
      CHECK(std::set<int>(nb.begin(), nb.end()).size() == nb.size());
    }
}

TEST_CASE("colocated groups collect identical positions") {
  ChannelLayout l;
  l.channel_ids = {"a", "b", "c", "d"};
  l.positions = {{0.1, 0.2}, {0.5, 0.5}, {0.1, 0.2}, {0.5, 0.5}};
  auto g = colocated_groups(l);
  REQUIRE(g.size() == 2);
  CHECK(g[0] == std::vector<int>{0, 2});
  CHECK(g[1] == std::vector<int>{1, 3});
}

TEST_CASE("default info channels lie in the posterior sector") {
  auto l = ring_layout(32);
  auto info = default_info_channels(l, 8);
  REQUIRE(info.size() == 8);
  for (int ch : info) CHECK(l.positions[static_cast<std::size_t>(ch)][1] < 0.0);
}

TEST_CASE("generator is a pure function of the spec") {
  auto s = small_spec(7);
  auto a = generate_synthetic(s);
  auto b = generate_synthetic(s);
  CHECK(a == b);
  CHECK(dataset_checksum(a) == dataset_checksum(b));
  s.seed = 8;
  CHECK(dataset_checksum(generate_synthetic(s)) != dataset_checksum(a));
}

TEST_CASE("generated dataset has the declared shape") {
  auto s = small_spec(1);
  auto ds = generate_synthetic(s);
  CHECK_NOTHROW(ds.validate());
  CHECK(ds.n_subjects() == 2);
  CHECK(ds.n_classes == 3);
  CHECK(ds.trials_per_class() == 5);
  CHECK(ds.n_channels() == 12);
  CHECK(ds.n_timesteps() == 64);
  CHECK(ds.subjects[0].id == "01");
  CHECK(ds.subjects[1].id == "02");
  CHECK(ds.time_of(25) == doctest::Approx(0.1));
}

TEST_CASE("class templates vanish outside the info window") {
  SyntheticSpec s;
  s.info_window = {0.1, 0.2};
  s.sfreq = 250.0;
  s.t_offset = 0.1;
  // window starts 0.2 s into the epoch and ends 0.3 s in
  const int first = static_cast<int>(std::lround(0.2 * 250.0));
  const int last = static_cast<int>(std::lround(0.3 * 250.0));
  CHECK(s.info_samples() == std::pair<int, int>{first, last});
  auto info = s.resolved_info_channels();
  std::set<int> info_set(info.begin(), info.end());
  for (const auto& tpl : class_templates(s)) {
    for (int c = 0; c < tpl.rows(); ++c)
      for (int t = 0; t < tpl.cols(); ++t)
        if (t < first || t > last || !info_set.contains(c)) CHECK(tpl(c, t) == 0.0f);
    CHECK(tpl.cwiseAbs().maxCoeff() > 0.0f);
  }
}

TEST_CASE("mixing matrices are orthonormal and the identity at angle zero") {
  auto s = small_spec(3);
  for (int sub = 0; sub < s.n_subjects; ++sub) {
    auto m = subject_mixing(s, sub);
    CHECK((m * m.transpose() - Mat<double>::Identity(m.rows(), m.cols())).norm() < 1e-12);
  }
  s.subject_mixing_angle = 0.0;
  CHECK((subject_mixing(s, 1) - Mat<double>::Identity(12, 12)).norm() == 0.0);
}

TEST_CASE("subject angles spread evenly over the mixing range") {
  SyntheticSpec s;
  std::vector<double> angles;
  for (int i = 0; i < s.n_subjects; ++i) angles.push_back(s.subject_angle(i));
  std::sort(angles.begin(), angles.end());
  const std::vector<double> want{-0.8, -0.4, 0.0, 0.4, 0.8};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(angles[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("noiseless unmixed trials equal the class template in every subject") {
  auto s = small_spec(11);
  s.n_classes = 2;
  s.subject_mixing_angle = 0.0;
  s.noise_amplitude = 0.0;
  auto ds = generate_synthetic(s);
  auto tpl = class_templates(s);
  for (const auto& sub : ds.subjects)
    for (int c = 0; c < 2; ++c)
      for (const auto& trial : sub.by_class[static_cast<std::size_t>(c)])
        CHECK((trial - tpl[static_cast<std::size_t>(c)]).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("invalid specs are rejected") {
  auto s = small_spec(0);
  s.n_classes = 0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = small_spec(0);
  s.info_window = {0.5, 0.1};
  CHECK_THROWS_AS(generate_synthetic(s), std::invalid_argument);
}

TEST_CASE("synthetic spec json round-trip and unknown keys") {
  auto s = small_spec(9);
  s.info_channels = {0, 1, 2, 3};
  auto back = synthetic_spec_from_json(to_json(s));
  CHECK(to_json(back) == to_json(s));
  auto j = to_json(s);
  j["bogus"] = 1;
  CHECK_THROWS_AS(synthetic_spec_from_json(j), std::invalid_argument);
}

TEST_CASE("dataset write and read round-trip exactly over random specs") {
  Rng rng(21);
  std::uniform_int_distribution<int> subjects(1, 3), classes(2, 4), trials(2, 6), chans(4, 20), steps(8, 40);
  for (int rep = 0; rep < 5; ++rep) {
    SyntheticSpec s;
    s.n_subjects = subjects(rng);
    s.n_classes = classes(rng);
    s.trials_per_class = trials(rng);
    s.n_channels = chans(rng);
    s.n_timesteps = steps(rng);
    s.t_offset = 0.0;
    s.info_window = {0.0, 0.02};
    s.seed = rng();
    auto ds = generate_synthetic(s);
    TempDir dir("rt");
    write_dataset(ds, dir.path());
    auto back = read_dataset(dir.path());
    CHECK(back == ds);
    CHECK(dataset_checksum(back) == dataset_checksum(ds));
  }
}

TEST_CASE("truncated payload is reported") {
  auto ds = generate_synthetic(small_spec(2));
  TempDir dir("trunc");
  write_dataset(ds, dir.path());
  auto file = dir / "sub-01.f32";
  auto bytes = read_file(file);
  write_file(file, bytes.substr(0, bytes.size() - 1));
  try {
    read_dataset(dir.path());
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("payload size mismatch") != std::string::npos);
  }
}

TEST_CASE("corrupted payload fails the checksum") {
  auto ds = generate_synthetic(small_spec(2));
  TempDir dir("crc");
  write_dataset(ds, dir.path());
  auto file = dir / "sub-02.f32";
  auto bytes = read_file(file);
  bytes[10] = static_cast<char>(bytes[10] ^ 0x5a);
  write_file(file, bytes);
  CHECK_THROWS_WITH_AS(read_dataset(dir.path()), doctest::Contains("checksum mismatch"), FormatError);
}

TEST_CASE("layout shorter than n_channels is reported") {
  auto ds = generate_synthetic(small_spec(2));
  TempDir dir("layout");
  write_dataset(ds, dir.path());
  auto manifest = nlohmann::ordered_json::parse(read_file(dir / "manifest.json"));
  manifest["layout"].erase(ds.layout.channel_ids.back());
  write_file(dir / "manifest.json", manifest.dump(2));
  CHECK_THROWS_WITH_AS(read_dataset(dir.path()), doctest::Contains("layout length mismatch"), FormatError);
}

TEST_CASE("crc32 matches the standard check value") {
  const std::string s = "123456789";
  std::vector<unsigned char> bytes(s.begin(), s.end());
  CHECK(crc32(bytes) == 0xCBF43926u);
}
