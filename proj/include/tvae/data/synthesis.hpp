#pragma once

// Synthetic datasets with known poses: transformed digits on a larger
// canvas, multi-object canvases, and procedurally rendered shapes.
//
// Pose convention (shared with the generator): a canvas pixel at offset p
// from the canvas centre shows the source at R(theta) (p - t), in pixel
// units with x along columns and y down the rows.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "tvae/data/containers.hpp"
#include "tvae/data/glyphs.hpp"
#include "tvae/data/ingest.hpp"
#include "tvae/geometry.hpp"
#include "tvae/kv.hpp"

namespace tvae::data {

struct TransformedDataset {
  ImageBatch<float> images;                      // [N, 1, H, W], values in [0, 1]
  std::vector<double> gt_theta;                  // radians
  std::vector<std::array<double, 2>> gt_t;       // pixels (x, y) as pasted
  std::vector<std::array<double, 2>> gt_t_raw;   // pixels before rounding
  std::vector<int> labels;
  std::vector<double> gt_scale;                  // shapes only
  KeyValues manifest;

  int size() const { return images.n; }
};

// cos/sin with exact values at multiples of pi/2, so quarter and half turns
// resample by pure index permutation.
inline std::pair<double, double> exact_cos_sin(double theta) {
  const double q = theta / (std::numbers::pi / 2);
  const double k = std::round(q);
  if (std::abs(q - k) < 1e-12) {
    switch (((static_cast<long long>(k) % 4) + 4) % 4) {
      case 0: return {1.0, 0.0};
      case 1: return {0.0, 1.0};
      case 2: return {-1.0, 0.0};
      default: return {0.0, -1.0};
    }
  }
  return {std::cos(theta), std::sin(theta)};
}

inline double bilinear_zero(std::span<const float> img, int h, int w, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  const double ax = x - fx, ay = y - fy;
  auto px = [&](int yy, int xx) -> double {
    return (xx < 0 || yy < 0 || xx >= w || yy >= h) ? 0.0 : img[yy * w + xx];
  };
  double v = 0.0;
  if (ax == 0.0 && ay == 0.0) return px(y0, x0);
  v += (1 - ax) * (1 - ay) * px(y0, x0);
  v += ax * (1 - ay) * px(y0, x0 + 1);
  v += (1 - ax) * ay * px(y0 + 1, x0);
  v += ax * ay * px(y0 + 1, x0 + 1);
  return v;
}

// Places a square source image on a square canvas under pose (theta, t),
// t in pixels, in a single bilinear resampling.
inline std::vector<float> place_transformed(std::span<const float> src, int src_size, int canvas, double theta,
                                            double tx, double ty) {
  const auto [c, s] = exact_cos_sin(theta);
  const double cc = (canvas - 1) / 2.0, sc = (src_size - 1) / 2.0;
  std::vector<float> out(static_cast<std::size_t>(canvas) * canvas);
  for (int row = 0; row < canvas; ++row)
    for (int col = 0; col < canvas; ++col) {
      const double dx = col - cc - tx, dy = row - cc - ty;
      const double u = c * dx - s * dy + sc, v = s * dx + c * dy + sc;
      out[row * canvas + col] = static_cast<float>(std::clamp(bilinear_zero(src, src_size, src_size, u, v), 0.0, 1.0));
    }
  return out;
}

enum class RotationDist { Normal, Uniform };

struct TransformSpec {
  RotationDist rotation = RotationDist::Uniform;
  double rotation_std = std::numbers::pi / 4;   // Normal only
  double translation_std_px = 5.0;
  int canvas = 50;
  bool round_translation = true;
  int max_attempts = 1000;
};

inline std::string to_string(RotationDist d) { return d == RotationDist::Normal ? "normal" : "uniform"; }

inline RotationDist rotation_dist_from_string(const std::string& s) {
  if (s == "normal") return RotationDist::Normal;
  if (s == "uniform") return RotationDist::Uniform;
  throw InvalidArgument("rotation distribution must be 'normal' or 'uniform', got '" + s + "'");
}

// `count` images; image i uses source digit i mod N and random stream
// (seed, i). Poses that push the digit entirely off the canvas are redrawn.
inline TransformedDataset synthesize_transformed_mnist(const DigitSource& source, const TransformSpec& spec, int count,
                                                       std::uint64_t seed) {
  if (source.images.n < 1) throw InvalidArgument("digit source is empty");
  if (source.images.height != source.images.width) throw ShapeError("source digits must be square");
  if (count < 1) throw InvalidArgument("dataset size must be positive");
  const int n_src = source.images.height;
  TransformedDataset ds;
  ds.images = ImageBatch<float>(count, 1, spec.canvas, spec.canvas);
  ds.gt_theta.resize(count);
  ds.gt_t.resize(count);
  ds.gt_t_raw.resize(count);
  ds.labels.resize(count);
  long long resampled = 0;
  for (int i = 0; i < count; ++i) {
    const int k = i % source.images.n;
    const auto src = source.images.image(k);
    const bool blank_source = std::all_of(src.begin(), src.end(), [](float v) { return v == 0.f; });
    Rng rng = derive_stream(seed, static_cast<std::uint64_t>(i));
    for (int attempt = 0;; ++attempt) {
      if (attempt >= spec.max_attempts)
        throw DegenerateInput("image " + std::to_string(i) + ": no on-canvas pose after " +
                              std::to_string(spec.max_attempts) + " draws");
      const double theta = spec.rotation == RotationDist::Normal ? spec.rotation_std * standard_normal(rng)
                                                                 : 2.0 * std::numbers::pi * uniform01(rng);
      const double rx = spec.translation_std_px * standard_normal(rng);
      const double ry = spec.translation_std_px * standard_normal(rng);
      const double tx = spec.round_translation ? std::round(rx) : rx;
      const double ty = spec.round_translation ? std::round(ry) : ry;
      const auto img = place_transformed(src, n_src, spec.canvas, theta, tx, ty);
      if (!blank_source && std::all_of(img.begin(), img.end(), [](float v) { return v == 0.f; })) {
        ++resampled;
        continue;
      }
      std::copy(img.begin(), img.end(), ds.images.image(i).begin());
      ds.gt_theta[i] = theta;
      ds.gt_t[i] = {tx, ty};
      ds.gt_t_raw[i] = {rx, ry};
      ds.labels[i] = source.labels.empty() ? -1 : source.labels[k];
      break;
    }
  }
  ds.manifest["kind"] = spec.rotation == RotationDist::Uniform ? "mnist-u" : "mnist-n";
  ds.manifest["seed"] = std::to_string(seed);
  ds.manifest["count"] = std::to_string(count);
  ds.manifest["canvas"] = std::to_string(spec.canvas);
  ds.manifest["rotation"] = to_string(spec.rotation);
  ds.manifest["rotation_std"] = format_double(spec.rotation_std);
  ds.manifest["translation_std_px"] = format_double(spec.translation_std_px);
  ds.manifest["round_translation"] = spec.round_translation ? "true" : "false";
  ds.manifest["source_count"] = std::to_string(source.images.n);
  ds.manifest["resampled_poses"] = std::to_string(resampled);
  return ds;
}

// ---------------------------------------------------------------------------

struct ObjectRecord {
  int source_index = 0;
  int label = -1;
  double theta = 0.0;
  double center_x = 0.0, center_y = 0.0;  // canvas pixel coordinates (column, row)
};

struct MultiObjectDataset {
  ImageBatch<float> images;
  std::vector<std::vector<ObjectRecord>> objects;
  KeyValues manifest;
};

struct MultiObjectSpec {
  int canvas = 150;
  int count = 3;
  int n_images = 100;
  bool non_overlapping = false;
  int max_attempts = 1000;
};

namespace detail {

struct Box {
  int x0, y0, x1, y1;  // inclusive; empty when x1 < x0
  bool empty() const { return x1 < x0; }
  bool overlaps(const Box& o) const {
    return !empty() && !o.empty() && x0 <= o.x1 && o.x0 <= x1 && y0 <= o.y1 && o.y0 <= y1;
  }
};

inline Box support(std::span<const float> img, int h, int w, int ox, int oy) {
  Box b{w, h, -1, -1};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (img[y * w + x] > 0.f) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
  if (!b.empty()) {
    b.x0 += ox;
    b.x1 += ox;
    b.y0 += oy;
    b.y1 += oy;
  }
  return b;
}

}  // namespace detail

// Pastes `count` source images per canvas at random whole-pixel offsets that
// keep each source fully inside; overlapping pixels take the maximum.
inline MultiObjectDataset synthesize_multi_object(const TransformedDataset& src, const MultiObjectSpec& spec,
                                                  std::uint64_t seed) {
  const int s = src.images.height;
  if (src.images.width != s) throw ShapeError("source images must be square");
  if (spec.canvas < s) throw InvalidDimension("canvas smaller than source images");
  if (src.size() < 1 || spec.count < 1 || spec.n_images < 1) throw InvalidArgument("empty multi-object request");
  MultiObjectDataset out;
  out.images = ImageBatch<float>(spec.n_images, 1, spec.canvas, spec.canvas);
  out.objects.resize(spec.n_images);
  const int span = spec.canvas - s;
  for (int i = 0; i < spec.n_images; ++i) {
    Rng rng = derive_stream(seed, static_cast<std::uint64_t>(i));
    std::uniform_int_distribution<int> pick(0, src.size() - 1), off(0, span);
    std::vector<detail::Box> placed;
    auto canvas = out.images.image(i);
    for (int k = 0; k < spec.count; ++k) {
      int idx = 0, ox = 0, oy = 0;
      for (int attempt = 0;; ++attempt) {
        idx = pick(rng);
        ox = off(rng);
        oy = off(rng);
        if (!spec.non_overlapping) break;
        const auto box = detail::support(src.images.image(idx), s, s, ox, oy);
        const bool clash = std::any_of(placed.begin(), placed.end(), [&](const auto& b) { return b.overlaps(box); });
        if (!clash) {
          placed.push_back(box);
          break;
        }
        if (attempt + 1 >= spec.max_attempts)
          throw DegenerateInput("could not place " + std::to_string(spec.count) + " non-overlapping objects");
      }
      const auto img = src.images.image(idx);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          float& dst = canvas[(oy + y) * spec.canvas + ox + x];
          dst = std::max(dst, img[y * s + x]);
        }
      ObjectRecord rec;
      rec.source_index = idx;
      rec.label = src.labels.empty() ? -1 : src.labels[idx];
      rec.theta = src.gt_theta.empty() ? 0.0 : src.gt_theta[idx];
      const double c = (s - 1) / 2.0;
      rec.center_x = ox + c + (src.gt_t.empty() ? 0.0 : src.gt_t[idx][0]);
      rec.center_y = oy + c + (src.gt_t.empty() ? 0.0 : src.gt_t[idx][1]);
      out.objects[i].push_back(rec);
    }
  }
  out.manifest["kind"] = "multi";
  out.manifest["seed"] = std::to_string(seed);
  out.manifest["canvas"] = std::to_string(spec.canvas);
  out.manifest["objects_per_image"] = std::to_string(spec.count);
  out.manifest["count"] = std::to_string(spec.n_images);
  out.manifest["non_overlapping"] = spec.non_overlapping ? "true" : "false";
  return out;
}

// ---------------------------------------------------------------------------

enum class Shape { Square, Ellipse, Heart };

inline std::string to_string(Shape s) {
  switch (s) {
    case Shape::Square: return "square";
    case Shape::Ellipse: return "ellipse";
    case Shape::Heart: return "heart";
  }
  return "?";
}

struct ShapesSpec {
  int canvas = 64;
  std::vector<Shape> shapes{Shape::Square, Shape::Ellipse, Shape::Heart};
  int n_rotations = 40;
  int n_scales = 6;
  double scale_min = 0.5, scale_max = 1.0;
  int translation_steps = 8;         // positions per axis
  double translation_range_px = 16;  // positions span [-range, range]
  double base_half_size_px = 10;     // half-size at scale 1
};

inline std::size_t shape_factor_count(const ShapesSpec& s) {
  return static_cast<std::size_t>(s.n_rotations) * s.n_scales * s.translation_steps * s.translation_steps;
}

// Membership in the canonical (unrotated, unit-size) shape.
//   square:  max(|x|, |y|) <= 1
//   ellipse: x^2 + (y / 0.6)^2 <= 1
//   heart:   (u^2 + v^2 - 1)^3 - u^2 v^3 <= 0 with u = 1.2 x, v = 0.1 - 1.2 y
//            (v points up, so the lobes sit at the top of the image)
inline bool inside_shape(Shape shape, double x, double y) {
  switch (shape) {
    case Shape::Square: return std::max(std::abs(x), std::abs(y)) <= 1.0;
    case Shape::Ellipse: return x * x + (y / 0.6) * (y / 0.6) <= 1.0;
    case Shape::Heart: {
      const double u = 1.2 * x, v = 0.1 - 1.2 * y;
      const double a = u * u + v * v - 1.0;
      return a * a * a - u * u * v * v * v <= 0.0;
    }
  }
  return false;
}

inline std::vector<float> render_shape(Shape shape, double theta, double scale, double tx, double ty, int canvas,
                                       double base_half_size_px = 10) {
  const auto [c, s] = exact_cos_sin(theta);
  const double cc = (canvas - 1) / 2.0, h = base_half_size_px * scale;
  std::vector<float> out(static_cast<std::size_t>(canvas) * canvas, 0.f);
  for (int row = 0; row < canvas; ++row)
    for (int col = 0; col < canvas; ++col) {
      const double dx = col - cc - tx, dy = row - cc - ty;
      const double qx = c * dx - s * dy, qy = s * dx + c * dy;
      if (inside_shape(shape, qx / h, qy / h)) out[row * canvas + col] = 1.f;
    }
  return out;
}

// Full factor grid, ordered shape, rotation, scale, y, x.
inline TransformedDataset synthesize_shapes(const ShapesSpec& spec) {
  const auto rot = linspace(0.0, 2.0 * std::numbers::pi, spec.n_rotations);
  const auto scl = linspace(spec.scale_min, spec.scale_max, spec.n_scales);
  const auto pos = linspace(-spec.translation_range_px, spec.translation_range_px, spec.translation_steps);
  const std::size_t per_shape = shape_factor_count(spec);
  const int n = static_cast<int>(per_shape * spec.shapes.size());
  TransformedDataset ds;
  ds.images = ImageBatch<float>(n, 1, spec.canvas, spec.canvas);
  int i = 0;
  for (std::size_t k = 0; k < spec.shapes.size(); ++k)
    for (double theta : rot)
      for (double sc : scl)
        for (double ty : pos)
          for (double tx : pos) {
            const auto img = render_shape(spec.shapes[k], theta, sc, tx, ty, spec.canvas, spec.base_half_size_px);
            std::copy(img.begin(), img.end(), ds.images.image(i).begin());
            ds.gt_theta.push_back(theta);
            ds.gt_t.push_back({tx, ty});
            ds.gt_t_raw.push_back({tx, ty});
            ds.labels.push_back(static_cast<int>(k));
            ds.gt_scale.push_back(sc);
            ++i;
          }
  std::string names;
  for (auto s : spec.shapes) names += (names.empty() ? "" : ",") + to_string(s);
  ds.manifest["kind"] = "shapes";
  ds.manifest["shapes"] = names;
  ds.manifest["canvas"] = std::to_string(spec.canvas);
  ds.manifest["n_rotations"] = std::to_string(spec.n_rotations);
  ds.manifest["n_scales"] = std::to_string(spec.n_scales);
  ds.manifest["translation_steps"] = std::to_string(spec.translation_steps);
  ds.manifest["translation_range_px"] = format_double(spec.translation_range_px);
  ds.manifest["count"] = std::to_string(n);
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout of a dataset directory:
//   images.tvst        float32 [N, 1, H, W] stack
//   ground_truth.tsv   index, label, theta, tx, ty, tx_raw, ty_raw, scale
//   manifest.txt       key=value synthesis parameters

inline constexpr const char* kGroundTruthHeader = "index\tlabel\ttheta\ttx\tty\ttx_raw\tty_raw\tscale";

inline void save_dataset(const std::string& dir, const TransformedDataset& ds) {
  std::filesystem::create_directories(dir);
  write_stack(dir + "/images.tvst", to_ndarray(ds.images));
  std::ostringstream gt;
  gt << kGroundTruthHeader << '\n';
  for (int i = 0; i < ds.size(); ++i) {
    gt << i << '\t' << (ds.labels.empty() ? -1 : ds.labels[i]) << '\t'
       << format_double(ds.gt_theta.empty() ? 0.0 : ds.gt_theta[i]);
    for (const auto* t : {&ds.gt_t, &ds.gt_t_raw})
      for (int d = 0; d < 2; ++d) gt << '\t' << format_double(t->empty() ? 0.0 : (*t)[i][d]);
    gt << '\t' << format_double(ds.gt_scale.empty() ? 1.0 : ds.gt_scale[i]) << '\n';
  }
  const std::string text = gt.str();
  write_file_bytes_atomic(dir + "/ground_truth.tsv", std::vector<std::uint8_t>(text.begin(), text.end()));
  write_key_values(dir + "/manifest.txt", ds.manifest);
}

inline TransformedDataset load_dataset(const std::string& dir) {
  TransformedDataset ds;
  const NdArray a = read_stack(dir + "/images.tvst");
  ds.images = to_image_batch<float>(a);
  if (std::filesystem::exists(dir + "/manifest.txt")) ds.manifest = read_key_values(dir + "/manifest.txt");
  const std::string gt_path = dir + "/ground_truth.tsv";
  if (!std::filesystem::exists(gt_path)) return ds;
  std::ifstream in(gt_path);
  std::string line;
  std::getline(in, line);
  if (trim(line) != kGroundTruthHeader) throw InvalidArgument(gt_path + ": unexpected header");
  bool any_scale = false;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream row(line);
    int index = 0, label = 0;
    double theta, tx, ty, rx, ry, scale;
    if (!(row >> index >> label >> theta >> tx >> ty >> rx >> ry >> scale))
      throw InvalidArgument(gt_path + ": malformed row '" + line + "'");
    if (index != static_cast<int>(ds.labels.size())) throw InvalidArgument(gt_path + ": rows out of order");
    ds.labels.push_back(label);
    ds.gt_theta.push_back(theta);
    ds.gt_t.push_back({tx, ty});
    ds.gt_t_raw.push_back({rx, ry});
    ds.gt_scale.push_back(scale);
    any_scale = any_scale || scale != 1.0;
  }
  if (!any_scale) ds.gt_scale.clear();
  if (static_cast<int>(ds.labels.size()) != ds.size())
    throw InvalidArgument(gt_path + ": " + std::to_string(ds.labels.size()) + " rows for " +
                          std::to_string(ds.size()) + " images");
  return ds;
}

inline void save_multi_object(const std::string& dir, const MultiObjectDataset& ds) {
  std::filesystem::create_directories(dir);
  write_stack(dir + "/images.tvst", to_ndarray(ds.images));
  std::ostringstream o;
  o << "image\tobject\tsource_index\tlabel\ttheta\tcenter_x\tcenter_y\n";
  for (std::size_t i = 0; i < ds.objects.size(); ++i)
    for (std::size_t k = 0; k < ds.objects[i].size(); ++k) {
      const auto& r = ds.objects[i][k];
      o << i << '\t' << k << '\t' << r.source_index << '\t' << r.label << '\t' << format_double(r.theta) << '\t'
        << format_double(r.center_x) << '\t' << format_double(r.center_y) << '\n';
    }
  const std::string text = o.str();
  write_file_bytes_atomic(dir + "/objects.tsv", std::vector<std::uint8_t>(text.begin(), text.end()));
  write_key_values(dir + "/manifest.txt", ds.manifest);
}

inline MultiObjectDataset load_multi_object(const std::string& dir) {
  MultiObjectDataset ds;
  ds.images = to_image_batch<float>(read_stack(dir + "/images.tvst"));
  ds.objects.resize(ds.images.n);
  if (std::filesystem::exists(dir + "/manifest.txt")) ds.manifest = read_key_values(dir + "/manifest.txt");
  std::ifstream in(dir + "/objects.tsv");
  if (!in) throw InvalidArgument("cannot open " + dir + "/objects.tsv");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::istringstream row(line);
    std::size_t image = 0, object = 0;
    ObjectRecord r;
    if (!(row >> image >> object >> r.source_index >> r.label >> r.theta >> r.center_x >> r.center_y) ||
        image >= ds.objects.size())
      throw InvalidArgument(dir + "/objects.tsv: malformed row '" + line + "'");
    ds.objects[image].push_back(r);
  }
  return ds;
}

}  // namespace tvae::data
