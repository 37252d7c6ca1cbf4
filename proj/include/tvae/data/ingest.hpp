#pragma once

// Loading image stacks from disk into ImageBatch form.

#include <algorithm>
#include <limits>
#include <string>

#include "tvae/data/containers.hpp"
#include "tvae/image.hpp"

namespace tvae::data {

enum class Format { Idx, Stack };
enum class Normalize { None, MinMax, Binarize };

inline Format format_from_string(const std::string& s) {
  if (s == "idx") return Format::Idx;
  if (s == "stack") return Format::Stack;
  throw InvalidArgument("format must be 'idx' or 'stack', got '" + s + "'");
}

inline Normalize normalize_from_string(const std::string& s) {
  if (s == "none") return Normalize::None;
  if (s == "minmax") return Normalize::MinMax;
  if (s == "binarize") return Normalize::Binarize;
  throw InvalidArgument("normalize must be 'none', 'minmax' or 'binarize', got '" + s + "'");
}

struct IngestOptions {
  int downsample_factor = 1;
  Normalize normalize = Normalize::MinMax;
  double binarize_threshold = 0.5;  // applied after min-max scaling
};

// [N, H, W] or [N, C, H, W] array to a batch.
template <typename T = float>
ImageBatch<T> to_image_batch(const NdArray& a) {
  if (a.dims.size() != 3 && a.dims.size() != 4)
    throw ShapeError("image array must have rank 3 or 4, got " + std::to_string(a.dims.size()));
  const bool has_c = a.dims.size() == 4;
  ImageBatch<T> b(static_cast<int>(a.dims[0]), has_c ? static_cast<int>(a.dims[1]) : 1,
                  static_cast<int>(a.dims[has_c ? 2 : 1]), static_cast<int>(a.dims[has_c ? 3 : 2]));
  std::transform(a.values.begin(), a.values.end(), b.pixels.begin(), [](double v) { return static_cast<T>(v); });
  return b;
}

// Mean over non-overlapping f x f blocks; trailing rows/columns that do not
// fill a block are dropped.
template <typename T>
ImageBatch<T> downsample_mean(const ImageBatch<T>& in, int f) {
  if (f < 1) throw InvalidArgument("downsample factor must be >= 1");
  if (f == 1) return in;
  const int h = in.height / f, w = in.width / f;
  if (h < 1 || w < 1) throw InvalidDimension("downsample factor exceeds image size");
  ImageBatch<T> out(in.n, in.channels, h, w);
  const double inv = 1.0 / (f * f);
  for (int i = 0; i < in.n; ++i)
    for (int c = 0; c < in.channels; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = 0.0;
          for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) s += in.at(i, c, y * f + dy, x * f + dx);
          out.at(i, c, y, x) = static_cast<T>(s * inv);
        }
  return out;
}

// Dataset-wide min-max scaling to [0, 1]; a constant dataset maps to zeros.
template <typename T>
void normalize_in_place(ImageBatch<T>& b, Normalize mode, double threshold = 0.5) {
  if (mode == Normalize::None || b.pixels.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(b.pixels.begin(), b.pixels.end());
  const double lo = *lo_it, hi = *hi_it;
  const double span = hi - lo;
  for (auto& v : b.pixels) {
    double u = span > 0.0 ? (static_cast<double>(v) - lo) / span : 0.0;
    if (mode == Normalize::Binarize) u = u >= threshold ? 1.0 : 0.0;
    v = static_cast<T>(u);
  }
}

template <typename T = float>
ImageBatch<T> ingest(const std::string& path, Format format, const IngestOptions& opt = {}) {
  const NdArray a = format == Format::Idx ? read_idx(path) : read_stack(path);
  ImageBatch<T> b = downsample_mean(to_image_batch<T>(a), opt.downsample_factor);
  normalize_in_place(b, opt.normalize, opt.binarize_threshold);
  return b;
}

inline std::vector<int> read_labels(const std::string& path, Format format) {
  const NdArray a = format == Format::Idx ? read_idx(path) : read_stack(path);
  if (a.dims.size() != 1) throw ShapeError("label array must have rank 1");
  std::vector<int> out(a.values.size());
  std::transform(a.values.begin(), a.values.end(), out.begin(), [](double v) { return static_cast<int>(v); });
  return out;
}

template <typename T>
NdArray to_ndarray(const ImageBatch<T>& b, DType dtype = DType::F32) {
  NdArray a;
  a.dtype = dtype;
  a.dims = {static_cast<std::uint64_t>(b.n), static_cast<std::uint64_t>(b.channels),
            static_cast<std::uint64_t>(b.height), static_cast<std::uint64_t>(b.width)};
  a.values.assign(b.pixels.begin(), b.pixels.end());
  return a;
}

}  // namespace tvae::data
