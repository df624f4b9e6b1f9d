#include "matchgan/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

#include <png.h>
#include <torch/torch.h>

#include "matchgan/errors.hpp"

namespace matchgan {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(float v) {
    const float clamped = std::clamp(v, -1.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround((clamped + 1.0f) * 127.5f));
}

}  // namespace

void write_png(const std::filesystem::path& path, const std::vector<float>& pixels, int height, int width) {
    if (pixels.size() != static_cast<std::size_t>(height) * width * 3)
        throw InvalidArgument("pixel buffer does not match image dimensions");
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IoError("cannot open " + path.string() + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    std::vector<std::uint8_t> bytes(pixels.size());
    std::transform(pixels.begin(), pixels.end(), bytes.begin(), to_byte);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * width * 3;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IoError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    RgbImage out;
    std::vector<std::uint8_t> bytes;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed reading " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    // Normalise everything to 8-bit RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY || png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    bytes.resize(static_cast<std::size_t>(out.width) * out.height * 3);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = bytes.data() + static_cast<std::size_t>(y) * out.width * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    out.pixels.resize(bytes.size());
    std::transform(bytes.begin(), bytes.end(), out.pixels.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; });
    return out;
}

void write_mosaic(const std::filesystem::path& path, const torch::Tensor& images, const MosaicLayout& layout) {
    if (images.dim() != 4 || images.size(1) != 3) throw InvalidArgument("mosaic expects N x 3 x H x W images");
    if (images.size(0) != static_cast<std::int64_t>(layout.rows) * layout.cols)
        throw InvalidArgument("mosaic needs rows * cols images");
    const int h = static_cast<int>(images.size(2));
    const int w = static_cast<int>(images.size(3));
    const int H = h * layout.rows;
    const int W = w * layout.cols;
    const auto cpu = images.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    const auto acc = cpu.accessor<float, 4>();
    std::vector<float> pixels(static_cast<std::size_t>(H) * W * 3);
    for (int r = 0; r < layout.rows; ++r)
        for (int c = 0; c < layout.cols; ++c) {
            const int n = r * layout.cols + c;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        pixels[((static_cast<std::size_t>(r) * h + y) * W + c * w + x) * 3 + ch] = acc[n][ch][y][x];
        }
    write_png(path, pixels, H, W);

    auto meta_path = path;
    meta_path += ".txt";
    std::ofstream meta(meta_path);
    if (!meta) throw IoError("cannot write " + meta_path.string());
    meta << "rows\t" << layout.rows << "\ncols\t" << layout.cols << "\ntile_height\t" << h << "\ntile_width\t" << w << '\n';
    for (std::size_t i = 0; i < layout.row_labels.size(); ++i) meta << "row\t" << i << '\t' << layout.row_labels[i] << '\n';
    for (std::size_t i = 0; i < layout.col_labels.size(); ++i) meta << "col\t" << i << '\t' << layout.col_labels[i] << '\n';
}

}  // namespace matchgan
