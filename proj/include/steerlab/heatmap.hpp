#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "steerlab/causal.hpp"

namespace steerlab {

// RGB8 raster of a layer x head grid with tick labels and a colour bar.
struct HeatmapImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // width * height * 3
    // Grid geometry: cell (l, h) covers
    // [grid_x + h*cell, grid_x + (h+1)*cell) x [grid_y + l*cell, grid_y + (l+1)*cell).
    int grid_x = 0;
    int grid_y = 0;
    int cell = 0;

    const uint8_t* pixel(int x, int y) const { return rgb.data() + (size_t(y) * size_t(width) + size_t(x)) * 3; }
};

// Brightness follows the positive part of each value relative to the largest
// positive value; non-positive cells share the darkest colour.
HeatmapImage render_heatmap(const Tensor& values);

void write_png(const HeatmapImage& img, const std::filesystem::path& path);

struct HeatmapFiles {
    std::filesystem::path csv;
    std::filesystem::path png;
    std::filesystem::path json;
};

// Writes <prefix>.csv, <prefix>.png and <prefix>.json (metadata).
HeatmapFiles export_heatmap(const CIEMap& map, const std::filesystem::path& prefix);

}  // namespace steerlab
