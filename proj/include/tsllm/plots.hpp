#pragma once

// SVG charts with CSV twins. Every chart is rendered from its CSV, so
// re-rendering a saved CSV reproduces the SVG byte for byte.

#include "tsllm/core.hpp"
#include "tsllm/evaluation.hpp"
#include "tsllm/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace tsllm {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw DataError("CSV has no column '" + name + "'");
  }
  std::vector<Scalar> numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<Scalar> out;
    for (const auto& r : rows) out.push_back(std::stod(r.at(c)));
    return out;
  }
  std::vector<std::string> strings(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<std::string> out;
    for (const auto& r : rows) out.push_back(r.at(c));
    return out;
  }
};

inline std::string csv_number(Scalar v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string to_csv(const CsvTable& t) {
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return os.str();
}

inline CsvTable parse_csv_table(std::istream& in) {
  CsvTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    for (auto f : detail::split_csv(line)) cells.emplace_back(detail::trim(f));
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size()) throw DataError("CSV row width differs from header");
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw DataError("CSV is empty");
  return t;
}

inline CsvTable read_csv_table(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  return parse_csv_table(in);
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << s;
}

namespace detail {

constexpr int kW = 640, kH = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 60;

inline std::string svg_open(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  return os.str();
}

inline std::string axes(Scalar ymax, const std::string& ylabel) {
  std::ostringstream os;
  const int x0 = kLeft, y0 = kH - kBottom, x1 = kW - kRight;
  os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << x0 << "\" y1=\"" << kTop << "\" x2=\"" << x0 << "\" y2=\"" << y0 << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const Scalar v = ymax * i / 4;
    const int y = y0 - (y0 - kTop) * i / 4;
    os << "<text x=\"" << x0 - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << csv_number(v) << "</text>\n";
  }
  os << "<text x=\"16\" y=\"" << (kTop + y0) / 2 << "\" transform=\"rotate(-90 16 " << (kTop + y0) / 2
     << ")\" text-anchor=\"middle\">" << ylabel << "</text>\n";
  return os.str();
}

inline Scalar nice_max(const std::vector<Scalar>& v) {
  Scalar m = 0;
  for (Scalar x : v) m = std::max(m, x);
  return m > 0 ? m * 1.1 : 1.0;
}

}  // namespace detail

inline std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                                 const std::vector<Scalar>& values, const std::string& ylabel) {
  using namespace detail;
  const Scalar ymax = nice_max(values);
  std::ostringstream os;
  os << svg_open(title) << axes(ymax, ylabel);
  const int plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  const double slot = values.empty() ? 0.0 : static_cast<double>(plot_w) / static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double h = plot_h * std::max<Scalar>(0, values[i]) / ymax;
    const double x = kLeft + slot * static_cast<double>(i) + slot * 0.15;
    char buf[256];
    std::snprintf(buf, sizeof buf, "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#4878a8\"/>\n", x,
                  kH - kBottom - h, slot * 0.7, h);
    os << buf;
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%d\" text-anchor=\"middle\">%s</text>\n", x + slot * 0.35,
                  kH - kBottom + 16, labels[i].c_str());
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

/// Lines over categorical x positions (the lambda grid is not evenly spaced).
inline std::string line_chart_svg(const std::string& title, const std::vector<std::string>& xlabels,
                                  const std::vector<std::pair<std::string, std::vector<Scalar>>>& series,
                                  const std::string& ylabel) {
  using namespace detail;
  std::vector<Scalar> all;
  for (const auto& s : series) all.insert(all.end(), s.second.begin(), s.second.end());
  const Scalar ymax = nice_max(all);
  std::ostringstream os;
  os << svg_open(title) << axes(ymax, ylabel);
  const int plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  const std::size_t n = xlabels.size();
  auto xpos = [&](std::size_t i) { return kLeft + plot_w * (static_cast<double>(i) + 0.5) / static_cast<double>(n); };
  char buf[256];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "<text x=\"%.2f\" y=\"%d\" text-anchor=\"middle\">%s</text>\n", xpos(i),
                  kH - kBottom + 16, xlabels[i].c_str());
    os << buf;
  }
  const char* colors[] = {"#c0392b", "#2471a3", "#229954", "#7d3c98"};
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 4];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[s].second.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", xpos(i), kH - kBottom - plot_h * series[s].second[i] / ymax);
      os << buf;
    }
    os << "\"/>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%d\" y=\"%d\" fill=\"%s\">%s</text>\n", kW - kRight - 150,
                  kTop + 16 * static_cast<int>(s + 1), color, series[s].first.c_str());
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

/// metric: "mse" or "mae".
inline CsvTable household_table(const EvalReport& r, const std::string& metric) {
  if (metric != "mse" && metric != "mae") throw ConfigError("unknown plot metric '" + metric + "'");
  CsvTable t{{"household_id", metric}, {}};
  for (const auto& [id, m] : r.per_household) t.rows.push_back({std::to_string(id), csv_number(metric == "mse" ? m.mse : m.mae)});
  return t;
}

inline CsvTable sensitivity_table(const std::vector<SensitivityRow>& rows) {
  CsvTable t{{"lambda", "sum_mse", "sum_mae", "inv_sum_mse", "inv_sum_mae"}, {}};
  for (const auto& r : rows) {
    t.rows.push_back({csv_number(r.lambda), csv_number(r.sum_mse), csv_number(r.sum_mae), csv_number(1.0 / r.sum_mse),
                      csv_number(1.0 / r.sum_mae)});
  }
  return t;
}

/// Renders the chart belonging to a CSV table, chosen by its columns.
/// Re-rendering a saved CSV gives the same SVG.
inline std::string render_table(const CsvTable& t) {
  if (t.header.size() == 2 && t.header[0] == "household_id") {
    const std::string upper = t.header[1] == "mse" ? "MSE" : "MAE";
    return bar_chart_svg("Per-household " + upper, t.strings("household_id"), t.numbers(t.header[1]), upper);
  }
  if (t.header.size() && t.header[0] == "lambda") {
    return line_chart_svg("Sensitivity to lambda", t.strings("lambda"),
                          {{"1 / Sum_MSE", t.numbers("inv_sum_mse")}, {"1 / Sum_MAE", t.numbers("inv_sum_mae")}},
                          "inverse summed error");
  }
  throw DataError("unrecognized plot table with first column '" + (t.header.empty() ? "" : t.header[0]) + "'");
}

/// Writes CSV first, then the SVG rendered from that CSV text.
inline void emit_table_plot(const CsvTable& t, const std::filesystem::path& csv, const std::filesystem::path& svg) {
  const std::string text = to_csv(t);
  write_text(csv, text);
  std::istringstream in(text);
  write_text(svg, render_table(parse_csv_table(in)));
}

/// Per-household MSE and MAE bar charts, plus the sensitivity curve when rows are given.
inline std::vector<std::filesystem::path> emit_plots(const EvalReport& report, const std::filesystem::path& dir,
                                                     const std::vector<SensitivityRow>& sensitivity = {}) {
  std::vector<std::filesystem::path> written;
  for (const std::string metric : {"mse", "mae"}) {
    const auto csv = dir / (metric + "_by_household.csv");
    const auto svg = dir / (metric + "_by_household.svg");
    emit_table_plot(household_table(report, metric), csv, svg);
    written.push_back(csv);
    written.push_back(svg);
  }
  if (!sensitivity.empty()) {
    emit_table_plot(sensitivity_table(sensitivity), dir / "sensitivity.csv", dir / "sensitivity.svg");
    written.push_back(dir / "sensitivity.csv");
    written.push_back(dir / "sensitivity.svg");
  }
  return written;
}

}  // namespace tsllm
