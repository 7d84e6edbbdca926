#pragma once

#include <span>
#include <string>
#include <vector>

namespace hytwin {

struct PlotSeries {
    std::string label;
    std::vector<double> times;
    std::vector<double> values;
};

struct PlotOptions {
    std::string title;
    std::string x_label = "time [s]";
    std::string y_label;
    int width = 900;
    int height = 480;
};

/// Standalone SVG line chart: one polyline per series, axis ticks and a
/// legend. Throws EMPTY_SERIES or GRID_MISMATCH.
[[nodiscard]] std::string emit_plot_svg(std::span<const PlotSeries> series, const PlotOptions& options = {});

/// "Nice" tick positions covering [lo, hi] with about `target` steps.
[[nodiscard]] std::vector<double> nice_ticks(double lo, double hi, int target = 6);

}  // namespace hytwin
