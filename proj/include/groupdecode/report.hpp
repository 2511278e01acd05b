#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "groupdecode/dataio.hpp"
#include "groupdecode/experiments.hpp"
#include "groupdecode/interpret.hpp"

namespace gdec {

/// Shortest decimal text that reads back to the same double.
std::string format_number(double v);

/// PFI table; columns depend on the axis (time, channel, frequency, or a long-form grid).
std::string pfi_csv(const PfiResult& r, const ChannelLayout& layout);
std::string psd_csv(const Psd& psd);
std::string loso_csv(const std::vector<LosoCurve>& curves);
std::string subgroup_csv(const SubgroupCurve& c);
std::string curves_csv(const std::vector<Curves>& curves);
std::string embedding_csv(const EmbeddingDiagnostics& d);

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  /// Optional band drawn around y; empty or same length as y.
  std::vector<double> lo;
  std::vector<double> hi;
};

/// SVG 1.1 line plot of one or more series.
std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label);

/// Sensor map: one circle per channel at its layout position, filled on a diverging scale.
std::string sensor_map_svg(const ChannelLayout& layout, const std::vector<double>& values, const std::string& title);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

/// Regenerates every table and figure of a run directory from its results.json.
/// Returns the files written.
std::vector<std::filesystem::path> render_run(const std::filesystem::path& run_dir);

}  // namespace gdec
