#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/types.h>

namespace matchgan {

// 8-bit RGB PNG. Pixels are height x width x 3 in [-1, 1]; values are
// clamped and mapped to 0..255 on write, and mapped back on read.
void write_png(const std::filesystem::path& path, const std::vector<float>& pixels, int height, int width);

struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;
};

RgbImage read_png(const std::filesystem::path& path);

struct MosaicLayout {
    int rows = 0;
    int cols = 0;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
};

// Tiles an N x 3 x H x W tensor (N == rows * cols, row-major) into one PNG
// and writes `<path>.txt` with the grid metadata.
void write_mosaic(const std::filesystem::path& path, const torch::Tensor& images, const MosaicLayout& layout);

}  // namespace matchgan
