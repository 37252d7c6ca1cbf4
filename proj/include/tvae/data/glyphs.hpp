#pragma once

// Procedural handwritten-style digits, 28x28 with the glyph inside the
// central 20x20 box like MNIST. Used where the real digit files are not at
// hand (tests, smoke runs); each sample jitters scale, slant, stroke width
// and position.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "tvae/image.hpp"
#include "tvae/rng.hpp"

namespace tvae::data {

struct GlyphPoint {
  double x, y;  // unit box, y down
};
using Stroke = std::vector<GlyphPoint>;

inline Stroke ellipse_stroke(double cx, double cy, double rx, double ry, int segments = 24) {
  Stroke s;
  for (int i = 0; i <= segments; ++i) {
    const double a = 2.0 * std::numbers::pi * i / segments;
    s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return s;
}

inline const std::array<std::vector<Stroke>, 10>& glyph_strokes() {
  static const std::array<std::vector<Stroke>, 10> g = {{
      {ellipse_stroke(0.5, 0.5, 0.33, 0.47)},
      {{{0.32, 0.18}, {0.55, 0.0}, {0.55, 1.0}}},
      {{{0.15, 0.22}, {0.32, 0.04}, {0.62, 0.02}, {0.82, 0.2}, {0.78, 0.45}, {0.15, 1.0}, {0.9, 1.0}}},
      {{{0.15, 0.06}, {0.8, 0.06}, {0.42, 0.45}, {0.78, 0.58}, {0.84, 0.84}, {0.55, 1.0}, {0.14, 0.9}}},
      {{{0.68, 1.0}, {0.68, 0.0}, {0.08, 0.68}, {0.92, 0.68}}},
      {{{0.85, 0.02}, {0.22, 0.02}, {0.16, 0.46}, {0.58, 0.4}, {0.86, 0.64}, {0.72, 0.96}, {0.14, 0.94}}},
      {{{0.76, 0.02}, {0.36, 0.28}, {0.17, 0.68}, {0.34, 0.98}, {0.7, 0.96}, {0.82, 0.7}, {0.6, 0.5},
        {0.3, 0.54}, {0.17, 0.68}}},
      {{{0.1, 0.03}, {0.9, 0.03}, {0.42, 1.0}}},
      {ellipse_stroke(0.5, 0.26, 0.27, 0.24), ellipse_stroke(0.5, 0.73, 0.33, 0.26)},
      {ellipse_stroke(0.48, 0.3, 0.3, 0.27), {{0.78, 0.3}, {0.72, 1.0}}},
  }};
  return g;
}

inline double segment_distance(double px, double py, GlyphPoint a, GlyphPoint b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double u = len2 > 0 ? ((px - a.x) * vx + (py - a.y) * vy) / len2 : 0.0;
  u = std::clamp(u, 0.0, 1.0);
  const double dx = px - (a.x + u * vx), dy = py - (a.y + u * vy);
  return std::sqrt(dx * dx + dy * dy);
}

struct GlyphStyle {
  double scale = 1.0;
  double slant = 0.0;      // horizontal shear per unit height
  double width_px = 1.6;   // stroke half-width
  double shift_x = 0.0, shift_y = 0.0;

  static GlyphStyle sample(Rng& rng) {
    GlyphStyle s;
    s.scale = 0.85 + 0.2 * uniform01(rng);
    s.slant = -0.25 + 0.5 * uniform01(rng);
    s.width_px = 1.2 + 1.0 * uniform01(rng);
    s.shift_x = -1.0 + 2.0 * uniform01(rng);
    s.shift_y = -1.0 + 2.0 * uniform01(rng);
    return s;
  }
};

// Renders one 28x28 digit in [0, 1].
inline std::vector<float> render_glyph(int digit, const GlyphStyle& style) {
  const int n = 28;
  const double box = 20.0 * style.scale;
  const double x0 = (n - box) / 2.0 + style.shift_x, y0 = (n - box) / 2.0 + style.shift_y;
  std::vector<Stroke> strokes;
  for (const auto& s : glyph_strokes().at(digit)) {
    Stroke px;
    for (const auto& p : s) px.push_back({x0 + box * (p.x + style.slant * (0.5 - p.y)), y0 + box * p.y});
    strokes.push_back(std::move(px));
  }
  std::vector<float> img(n * n, 0.f);
  for (int row = 0; row < n; ++row)
    for (int col = 0; col < n; ++col) {
      const double cx = col + 0.5, cy = row + 0.5;
      double d = 1e9;
      for (const auto& s : strokes)
        for (std::size_t k = 1; k < s.size(); ++k) d = std::min(d, segment_distance(cx, cy, s[k - 1], s[k]));
      img[row * n + col] = static_cast<float>(std::clamp(style.width_px - d + 0.5, 0.0, 1.0));
    }
  return img;
}

struct DigitSource {
  ImageBatch<float> images;  // [N, 1, 28, 28]
  std::vector<int> labels;
};

// Balanced labels 0..9 cycling; sample i is drawn from stream (seed, i).
inline DigitSource glyph_digits(int count, std::uint64_t seed) {
  DigitSource src{ImageBatch<float>(count, 1, 28, 28), std::vector<int>(count)};
  for (int i = 0; i < count; ++i) {
    Rng rng = derive_stream(seed, static_cast<std::uint64_t>(i));
    src.labels[i] = i % 10;
    const auto img = render_glyph(src.labels[i], GlyphStyle::sample(rng));
    std::copy(img.begin(), img.end(), src.images.image(i).begin());
  }
  return src;
}

}  // namespace tvae::data
