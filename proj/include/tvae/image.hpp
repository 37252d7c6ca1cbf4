#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tvae/errors.hpp"

namespace tvae {

// Dense batch of images stored as [n, channels, height, width], row-major.
template <typename T>
struct ImageBatch {
  int n = 0;
  int channels = 1;
  int height = 0;
  int width = 0;
  std::vector<T> pixels;

  ImageBatch() = default;
  ImageBatch(int n_, int channels_, int height_, int width_, T fill = T(0))
      : n(n_), channels(channels_), height(height_), width(width_),
        pixels(static_cast<std::size_t>(n_) * channels_ * height_ * width_, fill) {}

  std::size_t image_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }

  std::span<T> image(int i) {
    return {pixels.data() + i * image_size(), image_size()};
  }
  std::span<const T> image(int i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }

  T& at(int i, int c, int row, int col) {
    return pixels[((static_cast<std::size_t>(i) * channels + c) * height + row) * width + col];
  }
  const T& at(int i, int c, int row, int col) const {
    return pixels[((static_cast<std::size_t>(i) * channels + c) * height + row) * width + col];
  }

  // Copies a subset of images (by index) into a new batch.
  ImageBatch select(std::span<const int> indices) const {
    ImageBatch out(static_cast<int>(indices.size()), channels, height, width);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      auto src = image(indices[k]);
      std::copy(src.begin(), src.end(), out.image(static_cast<int>(k)).begin());
    }
    return out;
  }

  template <typename U>
  ImageBatch<U> cast() const {
    ImageBatch<U> out(n, channels, height, width);
    for (std::size_t k = 0; k < pixels.size(); ++k) out.pixels[k] = static_cast<U>(pixels[k]);
    return out;
  }
};

template <typename T>
void require_same_shape(const ImageBatch<T>& a, const ImageBatch<T>& b, const std::string& what) {
  if (a.n != b.n || a.channels != b.channels || a.height != b.height || a.width != b.width)
    throw ShapeError(what + ": image batch shapes differ");
}

}  // namespace tvae
