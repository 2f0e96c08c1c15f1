#pragma once

#include <string>
#include <vector>

namespace restgate::plot {

enum class PlotKind { GateTrace, LrSchedule, FilterResponse, Scatter };

// Column-oriented numeric table. Line plots use column 0 as x and every other
// column as a series; scatter uses columns 0/1 as x/y and an optional third
// column as an integer class label.
struct Table {
  std::string title;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

std::string to_csv(const Table& table);
std::string to_svg(PlotKind kind, const Table& table);

// Writes the SVG and its CSV twin atomically. Empty tables are rejected with IoError before anything is written.
void emit_plot(PlotKind kind, const Table& table, const std::string& svg_path, const std::string& csv_path);

}  // namespace restgate::plot
