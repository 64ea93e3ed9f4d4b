#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#ifndef SNN_VERSION
#define SNN_VERSION "dev"
#endif

namespace snn::cli {

const char* code_version() { return SNN_VERSION; }

std::string provenance_line(const ExperimentConfig& cfg) {
  char line[160];
  std::snprintf(line, sizeof line, "# config_hash=%016llx seed=%llu version=%s\n",
                static_cast<unsigned long long>(config_hash(cfg)), static_cast<unsigned long long>(cfg.seed),
                code_version());
  return line;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::runtime_error("csv: no column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double to_number(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  return (s.empty() || *end != '\0') ? std::numeric_limits<double>::quiet_NaN() : v;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::stringstream ss(text);
  std::string line;
  bool have_header = false;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      table.header = split_row(line);
      have_header = true;
    } else {
      table.rows.push_back(split_row(line));
      if (table.rows.back().size() != table.header.size()) {
        throw std::runtime_error("csv: row " + std::to_string(table.rows.size()) + " has the wrong number of cells");
      }
    }
  }
  if (!have_header) throw std::runtime_error("csv: no header line");
  return table;
}

std::string svg_line_chart(const std::string& csv, const ChartSpec& spec) {
  const CsvTable table = parse_csv(csv);
  const std::size_t xc = table.column(spec.x_column);
  const std::size_t yc = table.column(spec.y_column);
  const bool grouped = !spec.series_column.empty();
  const std::size_t sc = grouped ? table.column(spec.series_column) : 0;

  std::vector<Series> series;
  for (const auto& row : table.rows) {
    const std::string label = grouped ? spec.series_column + "=" + row[sc] : spec.y_column;
    auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.label == label; });
    if (it == series.end()) {
      series.push_back({label, {}});
      it = series.end() - 1;
    }
    const double x = to_number(row[xc]), y = to_number(row[yc]);
    if (std::isfinite(x) && std::isfinite(y)) it->points.emplace_back(x, y);
  }

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = 0.0, y_hi = -x_lo;
  for (const Series& s : series) {
    for (const auto& [x, y] : s.points) {
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  if (!std::isfinite(x_lo)) x_lo = 0.0, x_hi = 1.0, y_hi = 1.0;
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi <= y_lo) y_hi = y_lo + 1.0;

  const double width = 640, height = 400, left = 64, right = 180, top = 40, bottom = 56;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * plot_w; };
  auto py = [&](double y) { return top + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" "
         "font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt("%.1f", left + plot_w / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(spec.title) + "</text>\n";
  const std::string x0 = fmt("%.1f", left), x1 = fmt("%.1f", left + plot_w), y0 = fmt("%.1f", top + plot_h),
                    y1 = fmt("%.1f", top);
  svg += "<line x1=\"" + x0 + "\" y1=\"" + y0 + "\" x2=\"" + x1 + "\" y2=\"" + y0 + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + x0 + "\" y1=\"" + y0 + "\" x2=\"" + x0 + "\" y2=\"" + y1 + "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x_lo + (x_hi - x_lo) * t / 4.0, yv = y_lo + (y_hi - y_lo) * t / 4.0;
    svg += "<text x=\"" + fmt("%.1f", px(xv)) + "\" y=\"" + fmt("%.1f", top + plot_h + 18) +
           "\" text-anchor=\"middle\">" + fmt("%.3g", xv) + "</text>\n";
    svg += "<text x=\"" + fmt("%.1f", left - 8) + "\" y=\"" + fmt("%.1f", py(yv) + 4) + "\" text-anchor=\"end\">" +
           fmt("%.3g", yv) + "</text>\n";
  }
  svg += "<text x=\"" + fmt("%.1f", left + plot_w / 2) + "\" y=\"" + fmt("%.1f", height - 12) +
         "\" text-anchor=\"middle\">" + escape(spec.x_label) + "</text>\n";
  svg += "<text x=\"16\" y=\"" + fmt("%.1f", top + plot_h / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         fmt("%.1f", top + plot_h / 2) + ")\">" + escape(spec.y_label) + "</text>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = palette[i % (sizeof palette / sizeof *palette)];
    std::string pts;
    for (const auto& [x, y] : series[i].points) {
      if (!pts.empty()) pts += ' ';
      pts += fmt("%.2f", px(x)) + "," + fmt("%.2f", py(y));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const double ly = top + 10 + 18.0 * static_cast<double>(i);
    const std::string lx = fmt("%.1f", left + plot_w + 16);
    svg += "<line x1=\"" + lx + "\" y1=\"" + fmt("%.1f", ly) + "\" x2=\"" + fmt("%.1f", left + plot_w + 36) +
           "\" y2=\"" + fmt("%.1f", ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt("%.1f", left + plot_w + 42) + "\" y=\"" + fmt("%.1f", ly + 4) + "\">" +
           escape(series[i].label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace snn::cli
