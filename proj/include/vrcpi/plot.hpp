#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "vrcpi/errors.hpp"

namespace vrcpi {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Reads (episodes, exact_gap) pairs from a trace CSV, skipping rows without a gap.
inline Series read_gap_series(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) throw InvalidInput("cannot open " + csv.string());
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput(csv.string() + ": empty file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, ',');) header.push_back(col);
  }
  const auto col = [&](const char* name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InvalidInput(csv.string() + ": missing column " + name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t xe = col("episodes");
  const std::size_t yg = col("exact_gap");
  Series s{csv.stem().string(), {}, {}};
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != header.size()) throw InvalidInput(csv.string() + ": ragged row");
    if (cells[yg] == "nan") continue;
    s.x.push_back(std::stod(cells[xe]));
    s.y.push_back(std::stod(cells[yg]));
  }
  return s;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % 10];
}

}  // namespace detail

/// Line chart of exact gap against episodes, one polyline per series.
inline std::string render_svg(const std::vector<Series>& series) {
  const double W = 800, H = 500, L = 70, R = 200, T = 30, B = 50;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = 0.0, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) {
    xmin = 0;
    xmax = 1;
    ymax = 1;
  }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double xv = xmin + (xmax - xmin) * k / 5.0;
    const double yv = ymin + (ymax - ymin) * k / 5.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
       << detail::fmt(xv) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << detail::fmt(yv)
       << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">episodes</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 16 " << (T + H - B) / 2
     << ")\" text-anchor=\"middle\">exact local gap</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    os << "<polyline fill=\"none\" stroke=\"" << detail::color(i) << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < s.x.size(); ++j) os << (j ? " " : "") << px(s.x[j]) << ',' << py(s.y[j]);
    os << "\"/>\n";
    const double ly = T + 16.0 * static_cast<double>(i);
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << detail::color(i) << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\">" << s.name << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Plots every *.csv trace in `dir` (sorted by file name) into `out`.
inline std::size_t plot_directory(const std::filesystem::path& dir, const std::filesystem::path& out) {
  if (!std::filesystem::is_directory(dir)) throw InvalidInput("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InvalidInput("no trace CSVs in " + dir.string());
  std::vector<Series> series;
  for (const auto& f : files) series.push_back(read_gap_series(f));
  std::ofstream o(out);
  if (!o) throw InvalidInput("cannot write " + out.string());
  o << render_svg(series);
  return series.size();
}

}  // namespace vrcpi
