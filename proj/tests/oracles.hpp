#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library code paths being checked.

#include <cmath>
#include <algorithm>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = a + (b - a) * i / (n - 1);
  return out;
}

// Plain "same" 2-d cross-correlation of one channel, zero padding, odd k.
inline std::vector<double> correlate_same(const std::vector<double>& img, int h, int w,
                                          const std::vector<double>& kern, int k, double bias) {
  std::vector<double> out(static_cast<std::size_t>(h) * w, bias);
  const int pad = k / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int u = 0; u < k; ++u)
        for (int v = 0; v < k; ++v) {
          const int sy = y + u - pad, sx = x + v - pad;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
          out[y * w + x] += img[sy * w + sx] * kern[u * k + v];
        }
  return out;
}

// Image resampled as out(p) = in(R(pi/2) p) about the image centre, which
// for (x, y) = (col, row) offsets means out[row][col] = in[col][W-1-row]
// (square images only).
inline std::vector<double> rotate_quarter(const std::vector<double>& img, int n) {
  std::vector<double> out(img.size());
  for (int row = 0; row < n; ++row)
    for (int col = 0; col < n; ++col) out[row * n + col] = img[col * n + (n - 1 - row)];
  return out;
}

// Same resampling for a row-major plane stored with generic element access.
template <typename Get>
double rotated_at(const Get& get, int n, int row, int col) {
  return get(col, n - 1 - row);
}

inline double gaussian_kl(double mu_q, double var_q, double mu_p, double var_p) {
  return 0.5 * (var_q / var_p + (mu_q - mu_p) * (mu_q - mu_p) / var_p - 1.0 + std::log(var_p / var_q));
}

// Central finite difference of f at x along coordinate i.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// KL by enumerating every (t, r) cell: sum q * (log q - log p + KL_theta + KL_z)
// where p(t, r) = p(t) p(r), p(t) the renormalised Gaussian over the grid and
// theta compared against the prior component with the cell's own offset.
template <typename Field, typename Prior>
double enumerated_kl(const Field& f, const Prior& p) {
  const int n = static_cast<int>(f.cells());
  const int plane = f.height * f.width;
  double z = 0.0;
  for (int c = 0; c < n; ++c) z += std::exp(f.attn_logits[c]);
  // p(t) from scratch.
  std::vector<double> pt(plane);
  double pt_sum = 0.0;
  for (int row = 0; row < f.height; ++row)
    for (int col = 0; col < f.width; ++col) {
      const double x = -1.0 + 2.0 * col / (f.width - 1), y = -1.0 + 2.0 * row / (f.height - 1);
      const double sx = p.translation_std_x, sy = p.translation_std_y;
      pt[row * f.width + col] = std::exp(-0.5 * (x * x / (sx * sx) + y * y / (sy * sy)));
      pt_sum += pt[row * f.width + col];
    }
  double total = 0.0;
  for (int c = 0; c < n; ++c) {
    const int rot = c / plane;
    const double q = std::exp(f.attn_logits[c]) / z;
    const double prior = pt[c % plane] / pt_sum * p.p_r[rot];
    const double offset = 2.0 * std::numbers::pi * rot / f.r;
    const double sp = std::numbers::pi / f.r;
    double term = std::log(q) - std::log(prior);
    term += gaussian_kl(f.mu_dtheta[c] + offset, std::exp(2 * f.log_sigma_theta[c]), offset, sp * sp);
    for (int d = 0; d < f.z_dim; ++d)
      term += gaussian_kl(f.mu_z[c * f.z_dim + d], std::exp(2 * f.log_sigma_z[c * f.z_dim + d]), 0.0, 1.0);
    total += q * term;
  }
  return total;
}

// Expected feature rows after rotating the input by `steps` quarter turns:
// out'[(c, j)](p) = out[(c, j - steps*r/4)](R p).
template <typename Mat>
double max_rel_error_quarter(const Mat& base, const Mat& rotated, int channels, int r,
                             int n, int ring, int shift) {
  double max_diff = 0.0, max_ref = 0.0;
  for (int c = 0; c < channels; ++c)
    for (int j = 0; j < r; ++j) {
      const int src = ((j - shift) % r + r) % r;
      for (int row = ring; row < n - ring; ++row)
        for (int col = ring; col < n - ring; ++col) {
          const double expect = base(c * r + src, col * n + (n - 1 - row));
          const double got = rotated(c * r + j, row * n + col);
          max_diff = std::max(max_diff, std::abs(expect - got));
          max_ref = std::max(max_ref, std::abs(expect));
        }
    }
  return max_diff / max_ref;
}

}  // namespace oracle
