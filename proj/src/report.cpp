#include "groupdecode/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

namespace gdec {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string value_column(const PfiResult& r) { return r.metric == "accuracy_loss" ? "mean_loss" : "mean_" + r.metric; }

std::string channel_name(const PfiCell& c, const ChannelLayout& layout) {
  if (c.channels.size() > 1 && c.label.find('+') != std::string::npos) return c.label;
  if (c.channel >= 0 && c.channel < static_cast<int>(layout.size()))
    return layout.channel_ids[static_cast<std::size_t>(c.channel)];
  return c.label;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream o;
  o.precision(digits);
  o << v;
  return o.str();
}

}  // namespace

std::string pfi_csv(const PfiResult& r, const ChannelLayout& layout) {
  std::ostringstream out;
  const std::string value = value_column(r);
  const std::string tail = value + ",ci_lo,ci_hi\n";
  if (r.axis == "time") {
    out << "time_s," << tail;
  } else if (r.axis == "channel") {
    out << "channel,x,y," << tail;
  } else if (r.axis == "frequency") {
    out << "band_lo_hz,band_hi_hz," << tail;
  } else if (r.axis == "channel_time") {
    out << "channel,time_s," << tail;
  } else if (r.axis == "channel_frequency") {
    out << "channel,band_lo_hz,band_hi_hz," << tail;
  } else {
    throw std::invalid_argument("unknown PFI axis '" + r.axis + "'");
  }
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    const auto ci = r.interval(i);
    if (r.axis == "time") {
      out << format_number(c.center);
    } else if (r.axis == "channel") {
      const auto ch = static_cast<std::size_t>(c.channel);
      out << channel_name(c, layout) << ',' << format_number(layout.positions.at(ch)[0]) << ','
          << format_number(layout.positions.at(ch)[1]);
    } else if (r.axis == "frequency") {
      out << format_number(c.lo) << ',' << format_number(c.hi);
    } else if (r.axis == "channel_time") {
      out << channel_name(c, layout) << ',' << format_number(c.center);
    } else {
      out << channel_name(c, layout) << ',' << format_number(c.lo) << ',' << format_number(c.hi);
    }
    out << ',' << format_number(r.mean(i)) << ',' << format_number(ci.lo) << ',' << format_number(ci.hi) << '\n';
  }
  return out.str();
}

std::string psd_csv(const Psd& psd) {
  std::ostringstream out;
  out << "freq_hz,power\n";
  for (std::size_t k = 0; k < psd.freqs.size(); ++k)
    out << format_number(psd.freqs[k]) << ',' << format_number(psd.power[k]) << '\n';
  return out.str();
}

std::string loso_csv(const std::vector<LosoCurve>& curves) {
  std::ostringstream out;
  out << "left_out,variant,ratio,accuracy\n";
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.ratios.size(); ++i)
      out << c.left_out << ',' << to_string(c.variant) << ',' << format_number(c.ratios[i]) << ','
          << format_number(c.accuracy[i]) << '\n';
  return out.str();
}

std::string subgroup_csv(const SubgroupCurve& c) {
  std::ostringstream out;
  out << "n_subjects,all_subjects,trained_subjects\n";
  for (std::size_t i = 0; i < c.n_subjects.size(); ++i)
    out << c.n_subjects[i] << ',' << format_number(c.all_subjects[i]) << ',' << format_number(c.trained_subjects[i])
        << '\n';
  return out.str();
}

std::string curves_csv(const std::vector<Curves>& curves) {
  std::ostringstream out;
  out << "model,epoch,train_loss,val_loss,val_accuracy\n";
  for (std::size_t m = 0; m < curves.size(); ++m) {
    const auto& c = curves[m];
    for (std::size_t i = 0; i < c.epoch.size(); ++i) {
      out << m << ',' << c.epoch[i] << ',' << format_number(c.train_loss[i]) << ',';
      out << (i < c.val_loss.size() ? format_number(c.val_loss[i]) : "") << ',';
      out << (i < c.val_accuracy.size() ? format_number(c.val_accuracy[i]) : "") << '\n';
    }
  }
  return out.str();
}

std::string embedding_csv(const EmbeddingDiagnostics& d) {
  std::ostringstream out;
  out << "component,variance,r,p\n";
  for (std::size_t k = 0; k < d.variances.size(); ++k)
    out << k + 1 << ',' << format_number(d.variances[k]) << ',' << format_number(d.correlations[k].r) << ','
        << format_number(d.correlations[k].p) << '\n';
  return out.str();
}

std::string line_plot_svg(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                          const std::string& y_label) {
  constexpr double W = 640, H = 400, left = 70, right = 20, top = 40, bottom = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  auto grow = [](double v, double& lo, double& hi) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  };
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("series '" + s.name + "' has mismatched x and y");
    for (double v : s.x) grow(v, x0, x1);
    for (double v : s.y) grow(v, y0, y1);
    for (double v : s.lo) grow(v, y0, y1);
    for (double v : s.hi) grow(v, y0, y1);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
  auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title)
    << "</text>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << fmt(xv) << "</text>\n";
    o << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(yv)
      << "</text>\n";
  }
  if (y0 < 0 && y1 > 0)
    o << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << W - right << "\" y2=\"" << py(0)
      << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  o << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
    << xml_escape(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (top + H - bottom) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" "
    << "transform=\"rotate(-90 16 " << (top + H - bottom) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % std::size(colors)];
    if (!s.lo.empty() && s.lo.size() == s.y.size() && s.hi.size() == s.y.size()) {
      o << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.hi[i]) << ' ';
      for (std::size_t i = s.x.size(); i-- > 0;) o << px(s.x[i]) << ',' << py(s.lo[i]) << ' ';
      o << "\"/>\n";
    }
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    o << "\"/>\n";
    if (!s.name.empty())
      o << "<text x=\"" << W - right - 4 << "\" y=\"" << top + 14 * (k + 1) << "\" text-anchor=\"end\" font-size=\"11\" "
        << "fill=\"" << color << "\">" << xml_escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string sensor_map_svg(const ChannelLayout& layout, const std::vector<double>& values, const std::string& title) {
  if (values.size() != layout.size()) throw std::invalid_argument("sensor map needs one value per channel");
  constexpr double W = 440, H = 480, cx = 220, cy = 250, scale = 180;
  double peak = 0.0;
  for (double v : values)
    if (std::isfinite(v)) peak = std::max(peak, std::abs(v));
  auto color = [&](double v) {
    const double t = peak > 0 && std::isfinite(v) ? std::clamp(v / peak, -1.0, 1.0) : 0.0;
    // white at zero, red for positive, blue for negative
    const int fade = static_cast<int>(std::lround(255 * (1 - std::abs(t))));
    std::ostringstream c;
    c << "rgb(" << (t >= 0 ? 255 : fade) << ',' << fade << ',' << (t >= 0 ? fade : 255) << ')';
    return c.str();
  };
  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title)
    << "</text>\n"
    << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"" << scale * 1.1 << "\" fill=\"none\" stroke=\"#bbb\"/>\n";
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const double x = cx + scale * layout.positions[i][0];
    const double y = cy - scale * layout.positions[i][1];
    o << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"11\" fill=\"" << color(values[i])
      << "\" stroke=\"black\" stroke-width=\"0.5\"><title>" << xml_escape(layout.channel_ids[i]) << ": "
      << format_number(values[i]) << "</title></circle>\n";
  }
  o << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"11\">scale: +/-"
    << fmt(peak) << "</text>\n</svg>\n";
  return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

namespace {

using Written = std::vector<std::filesystem::path>;

void emit(const std::filesystem::path& path, const std::string& text, Written& written) {
  write_text(path, text);
  written.push_back(path);
}

void render_report(const std::filesystem::path& dir, const ExperimentReport& r, Written& written) {
  emit(dir / "subjects.csv", subjects_csv(r), written);
  emit(dir / "curves.csv", curves_csv(r.curves), written);
  std::vector<Series> series;
  for (std::size_t m = 0; m < r.curves.size(); ++m) {
    const auto& c = r.curves[m];
    if (c.val_accuracy.empty()) continue;
    Series s;
    s.name = r.curves.size() > 1 ? r.subjects.at(m).id : "";
    const auto n = c.val_accuracy.size();
    s.x.assign(c.epoch.end() - static_cast<std::ptrdiff_t>(n), c.epoch.end());
    s.y = c.val_accuracy;
    series.push_back(std::move(s));
  }
  emit(dir / "curves.svg", line_plot_svg(series, r.name + " validation accuracy", "epoch", "accuracy"), written);
}

void render_pfi(const std::filesystem::path& dir, const PfiResult& r, const ChannelLayout& layout,
                const std::string& stem, Written& written) {
  emit(dir / (stem + ".csv"), pfi_csv(r, layout), written);
  const std::string ylabel = r.metric == "accuracy_loss" ? "accuracy loss" : r.metric;
  if (r.axis == "time" || r.axis == "frequency") {
    Series s;
    for (std::size_t i = 0; i < r.cells.size(); ++i) {
      const auto ci = r.interval(i);
      s.x.push_back(r.cells[i].center);
      s.y.push_back(r.mean(i));
      s.lo.push_back(ci.lo);
      s.hi.push_back(ci.hi);
    }
    const std::string xlabel = r.axis == "time" ? "time (s)" : "frequency (Hz)";
    emit(dir / (stem + ".svg"), line_plot_svg({s}, stem + " " + r.axis, xlabel, ylabel), written);
    return;
  }
  // channel maps; grids are marginalized over their second axis
  std::vector<double> per_channel(layout.size(), 0.0);
  std::vector<int> count(layout.size(), 0);
  std::map<double, std::pair<double, int>> per_position;
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    const double m = r.mean(i);
    if (r.axis == "channel") {
      for (int ch : c.channels.size() > 1 && c.label.find('+') != std::string::npos ? c.channels
                                                                                    : std::vector<int>{c.channel}) {
        per_channel[static_cast<std::size_t>(ch)] += m;
        ++count[static_cast<std::size_t>(ch)];
      }
    } else {
      per_channel[static_cast<std::size_t>(c.channel)] += m;
      ++count[static_cast<std::size_t>(c.channel)];
      auto& slot = per_position[c.center];
      slot.first += m;
      ++slot.second;
    }
  }
  for (std::size_t ch = 0; ch < per_channel.size(); ++ch)
    if (count[ch] > 0) per_channel[ch] /= count[ch];
  emit(dir / (stem + "_map.svg"), sensor_map_svg(layout, per_channel, stem + " " + ylabel + " by channel"), written);
  if (!per_position.empty()) {
    Series s;
    for (const auto& [pos, acc] : per_position) {
      s.x.push_back(pos);
      s.y.push_back(acc.first / acc.second);
    }
    const std::string xlabel = r.axis == "channel_time" ? "time (s)" : "frequency (Hz)";
    emit(dir / (stem + "_marginal.svg"), line_plot_svg({s}, stem + " mean over channels", xlabel, ylabel), written);
  }
}

}  // namespace

std::vector<std::filesystem::path> render_run(const std::filesystem::path& run_dir) {
  const auto results = read_json(run_dir / "results.json");
  const std::string kind = results.at("kind").get<std::string>();
  Written written;
  if (kind == "train" || kind == "finetune") {
    render_report(run_dir, experiment_report_from_json(results.at("report")), written);
  } else if (kind == "loso") {
    std::vector<LosoCurve> curves;
    for (const auto& c : results.at("curves")) curves.push_back(loso_curve_from_json(c));
    emit(run_dir / "loso.csv", loso_csv(curves), written);
    std::map<std::string, std::pair<std::vector<double>, std::vector<std::vector<double>>>> by_variant;
    for (const auto& c : curves) {
      auto& [ratios, acc] = by_variant[to_string(c.variant)];
      ratios = c.ratios;
      acc.push_back(c.accuracy);
    }
    std::vector<Series> series;
    for (const auto& [variant, data] : by_variant) {
      Series s;
      s.name = variant;
      s.x = data.first;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        double sum = 0.0;
        for (const auto& a : data.second) sum += a[i];
        s.y.push_back(sum / static_cast<double>(data.second.size()));
      }
      series.push_back(std::move(s));
    }
    emit(run_dir / "loso.svg", line_plot_svg(series, "left-out subject accuracy", "training ratio", "accuracy"),
         written);
  } else if (kind == "subgroup") {
    const auto c = subgroup_curve_from_json(results.at("curve"));
    emit(run_dir / "subgroup.csv", subgroup_csv(c), written);
    std::vector<double> n(c.n_subjects.begin(), c.n_subjects.end());
    emit(run_dir / "subgroup.svg",
         line_plot_svg({{"all subjects", n, c.all_subjects, {}, {}}, {"trained subjects", n, c.trained_subjects, {}, {}}},
                       "subgroup scaling", "subjects in training", "accuracy"),
         written);
  } else if (kind == "kfold") {
    std::ostringstream out;
    out << "fold,accuracy\n";
    const auto folds = results.at("kfold").at("fold_accuracy").get<std::vector<double>>();
    for (std::size_t i = 0; i < folds.size(); ++i) out << i << ',' << format_number(folds[i]) << '\n';
    emit(run_dir / "kfold.csv", out.str(), written);
  } else if (kind == "pfi") {
    const auto layout = channel_layout_from_json(results.at("layout"));
    render_pfi(run_dir, pfi_result_from_json(results.at("pfi")), layout, "pfi", written);
  } else if (kind == "fir") {
    std::ostringstream out;
    out << "layer,kernel,freq_hz,power\n";
    std::vector<Series> series;
    for (const auto& k : results.at("kernels")) {
      const int layer = k.at("layer").get<int>(), kernel = k.at("kernel").get<int>();
      Series s;
      s.name = "L" + std::to_string(layer) + " K" + std::to_string(kernel);
      s.x = k.at("freqs").get<std::vector<double>>();
      s.y = k.at("power").get<std::vector<double>>();
      for (std::size_t i = 0; i < s.x.size(); ++i)
        out << layer << ',' << kernel << ',' << format_number(s.x[i]) << ',' << format_number(s.y[i]) << '\n';
      series.push_back(std::move(s));
    }
    emit(run_dir / "fir.csv", out.str(), written);
    emit(run_dir / "fir.svg", line_plot_svg(series, "kernel frequency response", "frequency (Hz)", "normalized power"),
         written);
  } else if (kind == "embed") {
    if (results.contains("diagnostics") && !results.at("diagnostics").is_null()) {
      const auto& d = results.at("diagnostics");
      EmbeddingDiagnostics diag;
      diag.variances = d.at("variances").get<std::vector<double>>();
      for (const auto& c : d.at("correlations"))
        diag.correlations.push_back({c.at("r").get<double>(), c.at("p").get<double>(), c.at("n").get<int>()});
      emit(run_dir / "embedding.csv", embedding_csv(diag), written);
    }
    if (results.contains("ablations")) {
      std::ostringstream out;
      out << "mode,subject,intact,ablated\n";
      for (const auto& a : results.at("ablations")) {
        const auto intact = a.at("intact").get<std::vector<double>>();
        const auto ablated = a.at("ablated").get<std::vector<double>>();
        for (std::size_t s = 0; s < intact.size(); ++s)
          out << a.at("mode").get<std::string>() << ',' << s << ',' << format_number(intact[s]) << ','
              << format_number(ablated[s]) << '\n';
      }
      emit(run_dir / "ablation.csv", out.str(), written);
    }
  } else if (kind == "gen") {
    // datasets carry their own manifest; nothing to render
  } else {
    throw std::invalid_argument("unknown result kind '" + kind + "' in " + (run_dir / "results.json").string());
  }
  return written;
}

}  // namespace gdec
