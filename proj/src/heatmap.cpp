#include "steerlab/heatmap.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>

#include "steerlab/errors.hpp"

namespace steerlab {

namespace {

using RGB = std::array<uint8_t, 3>;

constexpr RGB kBackground{24, 24, 24};
constexpr RGB kInk{200, 200, 200};
constexpr int kScale = 2;  // font pixel size

// 3x5 glyphs, one row per string, '#' = ink.
const std::map<char, std::array<const char*, 5>>& font() {
    static const std::map<char, std::array<const char*, 5>> f = {
        {'0', {"###", "#.#", "#.#", "#.#", "###"}}, {'1', {".#.", "##.", ".#.", ".#.", "###"}},
        {'2', {"###", "..#", "###", "#..", "###"}}, {'3', {"###", "..#", "###", "..#", "###"}},
        {'4', {"#.#", "#.#", "###", "..#", "..#"}}, {'5', {"###", "#..", "###", "..#", "###"}},
        {'6', {"###", "#..", "###", "#.#", "###"}}, {'7', {"###", "..#", "..#", "..#", "..#"}},
        {'8', {"###", "#.#", "###", "#.#", "###"}}, {'9', {"###", "#.#", "###", "..#", "###"}},
        {'.', {"...", "...", "...", "...", ".#."}}, {'-', {"...", "...", "###", "...", "..."}},
        {'e', {"...", "###", "###", "#..", "###"}}, {'+', {"...", ".#.", "###", ".#.", "..."}},
        {'L', {"#..", "#..", "#..", "#..", "###"}}, {'H', {"#.#", "#.#", "###", "#.#", "#.#"}},
    };
    return f;
}

int text_width(const std::string& s) { return static_cast<int>(s.size()) * 4 * kScale - kScale; }
constexpr int kTextHeight = 5 * kScale;

// Piecewise-linear dark-to-bright ramp; luminance rises monotonically.
RGB ramp(float t) {
    static constexpr std::array<RGB, 5> stops{{{0, 0, 4}, {87, 16, 110}, {188, 55, 84}, {249, 142, 9}, {252, 255, 164}}};
    t = std::clamp(t, 0.0f, 1.0f) * float(stops.size() - 1);
    const size_t i = std::min(size_t(t), stops.size() - 2);
    const float f = t - float(i);
    RGB c;
    for (size_t k = 0; k < 3; ++k) {
        c[k] = static_cast<uint8_t>(std::lround(stops[i][k] + f * (float(stops[i + 1][k]) - float(stops[i][k]))));
    }
    return c;
}

struct Canvas {
    HeatmapImage& img;

    void set(int x, int y, RGB c) {
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
        uint8_t* p = img.rgb.data() + (size_t(y) * size_t(img.width) + size_t(x)) * 3;
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }
    void fill(int x0, int y0, int w, int h, RGB c) {
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) set(x, y, c);
    }
    void text(int x, int y, const std::string& s) {
        for (char ch : s) {
            if (auto it = font().find(ch); it != font().end()) {
                for (int r = 0; r < 5; ++r)
                    for (int c = 0; c < 3; ++c)
                        if (it->second[size_t(r)][c] == '#') fill(x + c * kScale, y + r * kScale, kScale, kScale, kInk);
            }
            x += 4 * kScale;
        }
    }
};

std::string format_value(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", double(v));
    return buf;
}

}  // namespace

HeatmapImage render_heatmap(const Tensor& values) {
    const int n_layers = values.rows(), n_heads = values.cols();
    if (n_layers == 0 || n_heads == 0) throw InvalidArgument("empty heatmap");

    float max_pos = 0.0f;
    for (float v : values.flat()) max_pos = std::max(max_pos, v);

    HeatmapImage img;
    img.cell = std::clamp(480 / std::max(n_layers, n_heads), 8, 28);
    const int label_w = text_width(std::to_string(std::max(n_layers, n_heads) - 1));
    img.grid_x = 8 + label_w + 8;
    img.grid_y = 8 + kTextHeight + 8;
    const int grid_w = n_heads * img.cell, grid_h = n_layers * img.cell;
    const int bar_x = img.grid_x + grid_w + 16, bar_w = 14;
    const std::string top_label = format_value(max_pos);
    img.width = bar_x + bar_w + 8 + std::max(text_width(top_label), text_width("0")) + 8;
    img.height = img.grid_y + grid_h + 8;
    img.rgb.assign(size_t(img.width) * size_t(img.height) * 3, 0);

    Canvas cv{img};
    cv.fill(0, 0, img.width, img.height, kBackground);

    for (int l = 0; l < n_layers; ++l) {
        for (int h = 0; h < n_heads; ++h) {
            const float t = max_pos > 0.0f ? std::max(values.at(l, h), 0.0f) / max_pos : 0.0f;
            cv.fill(img.grid_x + h * img.cell, img.grid_y + l * img.cell, img.cell, img.cell, ramp(t));
        }
    }

    // Axes: "L" over the layer ticks, "H" beside the head ticks.
    cv.text(8, 8, "L");
    const int tick_every = img.cell >= label_w + 4 ? 1 : (label_w + 4 + img.cell - 1) / img.cell;
    for (int l = 0; l < n_layers; l += std::max(1, (kTextHeight + 2 + img.cell - 1) / img.cell)) {
        const std::string s = std::to_string(l);
        cv.text(img.grid_x - 8 - text_width(s), img.grid_y + l * img.cell + (img.cell - kTextHeight) / 2, s);
    }
    for (int h = 0; h < n_heads; h += tick_every) {
        const std::string s = std::to_string(h);
        cv.text(img.grid_x + h * img.cell + (img.cell - text_width(s)) / 2, 8, s);
    }
    cv.text(img.grid_x + grid_w + 2, 8, "H");

    // Colour bar, bright end on top.
    for (int y = 0; y < grid_h; ++y) {
        const float t = grid_h > 1 ? 1.0f - float(y) / float(grid_h - 1) : 1.0f;
        cv.fill(bar_x, img.grid_y + y, bar_w, 1, ramp(t));
    }
    cv.text(bar_x + bar_w + 8, img.grid_y, top_label);
    cv.text(bar_x + bar_w + 8, img.grid_y + grid_h - kTextHeight, "0");
    return img;
}

void write_png(const HeatmapImage& img, const std::filesystem::path& path) {
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    if (!fp) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("PNG encoding failed for " + path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.pixel(0, y)));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    if (std::fclose(fp) != 0) throw IoError("cannot write " + path.string());
}

HeatmapFiles export_heatmap(const CIEMap& map, const std::filesystem::path& prefix) {
    if (prefix.has_parent_path()) std::filesystem::create_directories(prefix.parent_path());
    HeatmapFiles files{prefix, prefix, prefix};
    files.csv += ".csv";
    files.png += ".png";
    files.json += ".json";

    auto write_text = [](const std::filesystem::path& p, const std::string& s) {
        std::ofstream out(p, std::ios::binary);
        if (!out || !(out << s)) throw IoError("cannot write " + p.string());
    };
    write_text(files.csv, map.to_csv());
    write_text(files.json, map.meta().dump(2) + "\n");
    write_png(render_heatmap(map.values), files.png);
    return files;
}

}  // namespace steerlab
