#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "groupdecode/report.hpp"
#include "test_util.hpp"

using namespace gdec;

namespace {

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

int count_fields(const std::string& line) { return static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1; }

ChannelLayout line_layout(int n) {
  ChannelLayout l;
  for (int i = 0; i < n; ++i) {
    l.channel_ids.push_back("ch" + std::to_string(i));
    l.positions.push_back({0.1 * i, -0.1 * i});
  }
  return l;
}

PfiResult fake_result(const std::string& axis, int n_cells, int repeats) {
  PfiResult r;
  r.axis = axis;
  r.metric = "accuracy_loss";
  r.baseline = 0.8;
  for (int i = 0; i < n_cells; ++i) {
    PfiCell c;
    c.label = "c" + std::to_string(i);
    c.channel = i % 3;
    c.channels = {i % 3};
    c.lo = i;
    c.hi = i + 1;
    c.center = 0.01 * i;
    r.cells.push_back(c);
    std::vector<double> v;
    for (int k = 0; k < repeats; ++k) v.push_back(0.01 * (i + k));
    r.values.push_back(v);
  }
  return r;
}

bool balanced_svg(const std::string& s) {
  return s.rfind("<?xml", 0) == 0 && s.find("<svg") != std::string::npos &&
         s.find("</svg>") == s.size() - 7 &&
         s.find("xmlns=\"http://www.w3.org/2000/svg\"") != std::string::npos && s.find("nan") == std::string::npos;
}

}  // namespace

TEST_CASE("format_number reads back exactly") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 30) - 15);
    CHECK(std::stod(format_number(v)) == v);
  }
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_number(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("PFI tables have one row per cell and axis-specific headers") {
  const auto layout = line_layout(3);
  const std::pair<const char*, const char*> cases[] = {
      {"time", "time_s,mean_loss,ci_lo,ci_hi"},
      {"channel", "channel,x,y,mean_loss,ci_lo,ci_hi"},
      {"frequency", "band_lo_hz,band_hi_hz,mean_loss,ci_lo,ci_hi"},
      {"channel_time", "channel,time_s,mean_loss,ci_lo,ci_hi"},
      {"channel_frequency", "channel,band_lo_hz,band_hi_hz,mean_loss,ci_lo,ci_hi"},
  };
  for (const auto& [axis, header] : cases) {
    const int n = std::string(axis) == "channel" ? 3 : 7;
    const auto rows = lines(pfi_csv(fake_result(axis, n, 4), layout));
    REQUIRE(rows.size() == static_cast<std::size_t>(n + 1));
    CHECK(rows[0] == header);
    for (const auto& row : rows) CHECK(count_fields(row) == count_fields(rows[0]));
  }
  CHECK(lines(pfi_csv(fake_result("channel", 3, 4), layout))[2].rfind("ch1,", 0) == 0);
  CHECK_THROWS(pfi_csv(fake_result("depth", 2, 2), layout));
}

TEST_CASE("kernel metrics name their value column") {
  auto r = fake_result("time", 3, 2);
  r.metric = "deviation_z";
  CHECK(lines(pfi_csv(r, line_layout(3)))[0] == "time_s,mean_deviation_z,ci_lo,ci_hi");
}

TEST_CASE("experiment tables") {
  LosoCurve a{"01", LosoVariant::group_emb, {0.0, 0.5, 1.0}, {0.4, 0.6, 0.7}};
  LosoCurve b{"02", LosoVariant::subject_scratch, {0.0, 0.5, 1.0}, {0.3, 0.5, 0.65}};
  auto rows = lines(loso_csv({a, b}));
  CHECK(rows.size() == 7);
  CHECK(rows[0] == "left_out,variant,ratio,accuracy");
  CHECK(rows[2] == "01," + to_string(LosoVariant::group_emb) + ",0.5,0.6");

  SubgroupCurve s;
  s.n_subjects = {1, 2, 3};
  s.all_subjects = {0.4, 0.5, 0.6};
  s.trained_subjects = {0.7, 0.65, 0.6};
  rows = lines(subgroup_csv(s));
  CHECK(rows.size() == 4);
  CHECK(rows[3] == "3,0.6,0.6");

  Curves c{{1, 2, 3}, {1.0, 0.9, 0.8}, {1.1, 1.0}, {0.3, 0.4}};
  rows = lines(curves_csv({c}));
  REQUIRE(rows.size() == 4);
  CHECK(rows[1] == "0,1,1,1.1,0.3");
  CHECK(rows[3] == "0,3,0.8,,");

  Psd p{{0.0, 1.0}, {2.0, 3.0}};
  CHECK(lines(psd_csv(p)).size() == 3);

  EmbeddingDiagnostics d;
  d.variances = {2.0, 1.0};
  d.correlations = {{0.5, 0.2, 5}, {-0.1, 0.9, 5}};
  CHECK(lines(embedding_csv(d))[1] == "1,2,0.5,0.2");
}

TEST_CASE("figures are well-formed SVG") {
  Series s{"a", {0, 1, 2}, {0.1, 0.5, 0.2}, {0.0, 0.4, 0.1}, {0.2, 0.6, 0.3}};
  Series flat{"b<&>", {0, 1}, {1.0, 1.0}, {}, {}};
  const auto svg = line_plot_svg({s, flat}, "title & more", "x", "y");
  CHECK(balanced_svg(svg));
  CHECK(svg.find("b&lt;&amp;&gt;") != std::string::npos);
  CHECK(balanced_svg(line_plot_svg({}, "empty", "x", "y")));
  const auto map = sensor_map_svg(line_layout(3), {0.1, -0.2, 0.0}, "map");
  CHECK(balanced_svg(map));
  CHECK(std::count(map.begin(), map.end(), '\n') > 3);
  CHECK(map.find("<circle") != std::string::npos);
  CHECK_THROWS(sensor_map_svg(line_layout(3), {0.1}, "map"));
}

TEST_CASE("render_run regenerates tables from results") {
  gdec::testing::TempDir dir("report");
  const auto layout = line_layout(3);
  nlohmann::json j;
  j["kind"] = "pfi";
  j["layout"] = to_json(layout);
  j["pfi"] = to_json(fake_result("channel_time", 6, 3));
  write_json(dir / "results.json", j);
  const auto files = render_run(dir.path());
  CHECK(files.size() == 3);
  for (const auto& f : files) CHECK(std::filesystem::exists(f));
  const auto first = read_json(dir / "results.json");
  CHECK(first == j);

  // rendering is a pure function of results.json
  const auto before = gdec::testing::read_text_file(dir / "pfi.csv");
  render_run(dir.path());
  CHECK(gdec::testing::read_text_file(dir / "pfi.csv") == before);

  j["kind"] = "mystery";
  write_json(dir / "results.json", j);
  CHECK_THROWS_WITH(render_run(dir.path()), doctest::Contains("unknown result kind"));
  write_text(dir / "results.json", "{ not json");
  CHECK_THROWS_WITH(render_run(dir.path()), doctest::Contains("malformed JSON"));
}

TEST_CASE("render_run handles sweep results") {
  gdec::testing::TempDir dir("sweeps");
  nlohmann::json j;
  j["kind"] = "loso";
  j["curves"] = {to_json(LosoCurve{"01", LosoVariant::group, {0.0, 1.0}, {0.5, 0.6}})};
  write_json(dir / "results.json", j);
  CHECK(render_run(dir.path()).size() == 2);
  CHECK(lines(gdec::testing::read_text_file(dir / "loso.csv")).size() == 3);
}
