#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace snn::cli {

/// Version string embedded in every artifact.
const char* code_version();

/// "# config_hash=<16 hex> seed=<n> version=<v>" followed by a newline.
std::string provenance_line(const ExperimentConfig& cfg);

/// Writes the whole string or throws std::runtime_error.
void write_file(const std::filesystem::path& path, const std::string& text);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Throws std::runtime_error if the column is missing.
  std::size_t column(const std::string& name) const;
};

/// Comma-separated text; lines starting with '#' are skipped, the first
/// remaining line is the header.
CsvTable parse_csv(const std::string& text);

struct ChartSpec {
  std::string title;
  std::string x_column;
  std::string y_column;
  /// One polyline per distinct value of this column; empty for a single series.
  std::string series_column;
  std::string x_label;
  std::string y_label;
};

/// Minimal SVG line chart (axes, ticks, legend, one polyline per series).
/// Depends only on the CSV text and the spec; non-finite y values are skipped.
std::string svg_line_chart(const std::string& csv, const ChartSpec& spec);

}  // namespace snn::cli
