#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "handfit/tensor.hpp"

namespace handfit {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Renders the series as coloured polylines with point markers on a white
/// canvas with axes; returns [height, width, 3].
Tensor render_line_plot(const std::vector<PlotSeries>& series, int width = 320, int height = 240);
void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series);

}  // namespace handfit
