#ifndef GRPO_FORGE_REPORT_HPP_
#define GRPO_FORGE_REPORT_HPP_

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace grpo_forge {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title;
  std::string x_label = "step";
  std::string y_label;
  /// Fixed y range; derived from the data when unset.
  std::optional<std::pair<double, double>> y_range;
};

/// Line chart with one <polyline> per series in a fixed 640x400 viewBox.
/// Output depends only on the inputs, so reruns are byte-identical.
std::string render_line_chart(const std::vector<PlotSeries>& series, const PlotOptions& options);

/// Minimal CSV table: header names and rows of raw cell strings.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a column; throws InvalidInput when absent.
  std::size_t column(const std::string& name) const;
  /// Column parsed as doubles; empty cells become NaN.
  std::vector<double> numeric(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace grpo_forge

#endif  // GRPO_FORGE_REPORT_HPP_
