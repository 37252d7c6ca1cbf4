#pragma once

// 8-bit PNG export of image batches as a montage.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "tvae/errors.hpp"
#include "tvae/image.hpp"

namespace tvae {

struct Raster {
  int width = 0, height = 0, channels = 1;  // 1 gray, 3 rgb
  std::vector<std::uint8_t> pixels;         // row-major, interleaved
};

inline void write_png(const std::string& path, const Raster& r) {
  if (r.channels != 1 && r.channels != 3) throw InvalidArgument("PNG export supports 1 or 3 channels");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw InvalidArgument("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng failed writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, r.width, r.height, 8, r.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < r.height; ++y)
    png_write_row(png, const_cast<png_bytep>(r.pixels.data() + static_cast<std::size_t>(y) * r.width * r.channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Tiles the batch into ceil(sqrt(N)) columns with a `gap`-pixel black
// border between tiles; values are clamped to [0, 1] and scaled to 0..255.
template <typename T>
Raster montage(const ImageBatch<T>& b, int gap = 1) {
  if (b.n < 1) throw InvalidArgument("montage of an empty batch");
  if (b.channels != 1 && b.channels != 3) throw InvalidArgument("montage supports 1 or 3 channels");
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(b.n))));
  const int rows = (b.n + cols - 1) / cols;
  Raster r;
  r.channels = b.channels;
  r.width = cols * b.width + (cols - 1) * gap;
  r.height = rows * b.height + (rows - 1) * gap;
  r.pixels.assign(static_cast<std::size_t>(r.width) * r.height * r.channels, 0);
  for (int i = 0; i < b.n; ++i) {
    const int ox = (i % cols) * (b.width + gap), oy = (i / cols) * (b.height + gap);
    for (int c = 0; c < b.channels; ++c)
      for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
          const double v = std::clamp(static_cast<double>(b.at(i, c, y, x)), 0.0, 1.0);
          r.pixels[(static_cast<std::size_t>(oy + y) * r.width + ox + x) * r.channels + c] =
              static_cast<std::uint8_t>(std::lround(255.0 * v));
        }
  }
  return r;
}

template <typename T>
void write_png_grid(const std::string& path, const ImageBatch<T>& b, int gap = 1) {
  write_png(path, montage(b, gap));
}

}  // namespace tvae
