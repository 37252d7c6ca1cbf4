#pragma once

// Coordinate grids, rigid transforms of coordinates, random Fourier features
// and circular statistics.
//
// Pixel convention: row-major order, pixel (row, col) maps to
//   x = -1 + 2 col / (W - 1),  y = -1 + 2 row / (H - 1)
// so the top-left pixel is (-1, -1) and y grows downward.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tvae/errors.hpp"
#include "tvae/rng.hpp"

namespace tvae {

template <typename T>
using Coords = Eigen::Matrix<T, Eigen::Dynamic, 2, Eigen::RowMajor>;

template <typename T>
using Vec2 = Eigen::Matrix<T, 2, 1>;

template <typename T>
using Mat2 = Eigen::Matrix<T, 2, 2>;

template <typename T>
using MatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
using VectorX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// n evenly spaced values from a to b inclusive (a single value is a).
inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out(std::max(n, 0));
  for (int i = 0; i < n; ++i) out[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
  return out;
}

template <typename T>
struct CoordinateGrid {
  int height = 0;
  int width = 0;
  Coords<T> coords;

  int size() const { return height * width; }
  // Normalised units per pixel along each axis.
  T step_x() const { return T(2) / T(width - 1); }
  T step_y() const { return T(2) / T(height - 1); }
};

template <typename T = double>
CoordinateGrid<T> make_coordinate_grid(int height, int width) {
  if (height < 2 || width < 2)
    throw InvalidDimension("coordinate grid needs H >= 2 and W >= 2, got " +
                           std::to_string(height) + "x" + std::to_string(width));
  CoordinateGrid<T> grid;
  grid.height = height;
  grid.width = width;
  grid.coords.resize(static_cast<Eigen::Index>(height) * width, 2);
  // (2k - (n-1)) / (n-1) is exactly antisymmetric in k, so the grid is
  // symmetric about the origin bit-for-bit.
  for (int row = 0; row < height; ++row) {
    const T y = T(2 * row - (height - 1)) / T(height - 1);
    for (int col = 0; col < width; ++col) {
      const T x = T(2 * col - (width - 1)) / T(width - 1);
      grid.coords(row * width + col, 0) = x;
      grid.coords(row * width + col, 1) = y;
    }
  }
  return grid;
}

template <typename T>
Mat2<T> rotation_matrix(T theta) {
  using std::cos;
  using std::sin;
  const T c = cos(theta), s = sin(theta);
  Mat2<T> r;
  r << c, -s, s, c;
  return r;
}

// Derivative of rotation_matrix with respect to theta.
template <typename T>
Mat2<T> rotation_matrix_derivative(T theta) {
  using std::cos;
  using std::sin;
  const T c = cos(theta), s = sin(theta);
  Mat2<T> d;
  d << -s, -c, c, -s;
  return d;
}

// x' = R(theta) x + t. theta is kept unwrapped.
template <typename T>
struct RigidTransform {
  T theta = T(0);
  Vec2<T> t = Vec2<T>::Zero();

  // Transform used to render an object centred at `center` and rotated by
  // `theta`: x' = R(theta)(x - center) = R(theta) x - R(theta) center.
  static RigidTransform object_pose(T theta, const Vec2<T>& center) {
    return {theta, -(rotation_matrix(theta) * center)};
  }

  // Applying *this first and then `next` equals applying the result.
  RigidTransform then(const RigidTransform& next) const {
    return {theta + next.theta, rotation_matrix(next.theta) * t + next.t};
  }
};

template <typename T>
Coords<T> transform_coordinates(const Coords<T>& coords, const RigidTransform<T>& tf) {
  const Mat2<T> rot = rotation_matrix(tf.theta);
  Coords<T> out(coords.rows(), 2);
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const T x = coords(i, 0), y = coords(i, 1);
    out(i, 0) = rot(0, 0) * x + rot(0, 1) * y + tf.t(0);
    out(i, 1) = rot(1, 0) * x + rot(1, 1) * y + tf.t(1);
  }
  return out;
}

template <typename T>
Coords<T> transform_coordinates(const CoordinateGrid<T>& grid, const RigidTransform<T>& tf) {
  return transform_coordinates(grid.coords, tf);
}

// Fixed random frequency matrix used to lift 2-d coordinates to 2*n_freq
// features. Frequencies are drawn once and then treated as model state.
template <typename T>
struct FourierFeatureSpec {
  Eigen::Matrix<T, Eigen::Dynamic, 2, Eigen::RowMajor> frequencies;
  double scale = 1.0;

  int n_freq() const { return static_cast<int>(frequencies.rows()); }
  int n_features() const { return 2 * n_freq(); }

  static FourierFeatureSpec sample(int n_freq, double scale, Rng& rng) {
    if (n_freq < 1) throw InvalidArgument("fourier features need n_freq >= 1");
    FourierFeatureSpec spec;
    spec.scale = scale;
    spec.frequencies.resize(n_freq, 2);
    std::normal_distribution<double> dist(0.0, scale);
    for (int k = 0; k < n_freq; ++k)
      for (int d = 0; d < 2; ++d)
        spec.frequencies(k, d) = static_cast<T>(static_cast<float>(dist(rng)));
    return spec;
  }
};

// Row i of the result is [sin(2 pi F c_i), cos(2 pi F c_i)] for coordinate c_i.
template <typename T, typename Derived>
MatrixX<T> fourier_expand(const Eigen::MatrixBase<Derived>& coords, const FourierFeatureSpec<T>& spec) {
  if (coords.cols() != 2)
    throw ShapeError("fourier_expand expects 2-column coordinates, got " +
                     std::to_string(coords.cols()));
  const int nf = spec.n_freq();
  const T two_pi = T(2) * std::numbers::pi_v<T>;
  MatrixX<T> proj = two_pi * (coords.template cast<T>() * spec.frequencies.transpose());
  MatrixX<T> out(coords.rows(), 2 * nf);
  out.leftCols(nf) = proj.array().sin().matrix();
  out.rightCols(nf) = proj.array().cos().matrix();
  return out;
}

// ---------------------------------------------------------------------------
// Circular statistics (always double precision).

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, two_pi);
  if (w <= 0.0) w += two_pi;
  return w - std::numbers::pi;
}

inline double circular_mean(std::span<const double> angles) {
  if (angles.empty()) throw DegenerateInput("circular mean of an empty series");
  double s = 0.0, c = 0.0;
  for (double a : angles) {
    s += std::sin(a);
    c += std::cos(a);
  }
  const double resultant = std::hypot(s, c) / static_cast<double>(angles.size());
  if (resultant < 1e-12) throw DegenerateInput("circular mean undefined: zero resultant length");
  return std::atan2(s, c);
}

// Circular correlation coefficient of two angle series.
inline double circular_correlation(std::span<const double> alpha, std::span<const double> beta) {
  if (alpha.empty() || alpha.size() != beta.size())
    throw DegenerateInput("circular correlation needs equal nonzero lengths");
  const double ma = circular_mean(alpha);
  const double mb = circular_mean(beta);
  double num = 0.0, sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const double da = std::sin(alpha[i] - ma);
    const double db = std::sin(beta[i] - mb);
    num += da * db;
    sa += da * da;
    sb += db * db;
  }
  const double den = std::sqrt(sa * sb);
  const double n = static_cast<double>(alpha.size());
  if (!(sa > 1e-24 * n) || !(sb > 1e-24 * n)) throw DegenerateInput("circular correlation undefined: zero circular variance");
  return num / den;
}

}  // namespace tvae
