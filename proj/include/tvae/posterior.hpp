#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tvae/errors.hpp"

namespace tvae {

// Encoder output for a batch: per (rotation component, row, col) cell an
// attention logit plus Gaussian parameters for z and the residual angle.
// Cell order is (r', row, col), row-major; z parameters are innermost.
template <typename T>
struct PosteriorField {
  int batch = 0;
  int r = 1;
  int height = 0;
  int width = 0;
  int z_dim = 0;
  std::vector<T> attn_logits;      // [B, r, H, W]
  std::vector<T> mu_z;             // [B, r, H, W, z]
  std::vector<T> log_sigma_z;      // [B, r, H, W, z]
  std::vector<T> mu_dtheta;        // [B, r, H, W]
  std::vector<T> log_sigma_theta;  // [B, r, H, W]

  PosteriorField() = default;
  PosteriorField(int batch_, int r_, int height_, int width_, int z_dim_)
      : batch(batch_), r(r_), height(height_), width(width_), z_dim(z_dim_) {
    const std::size_t n = static_cast<std::size_t>(batch) * cells();
    attn_logits.assign(n, T(0));
    mu_z.assign(n * z_dim, T(0));
    log_sigma_z.assign(n * z_dim, T(0));
    mu_dtheta.assign(n, T(0));
    log_sigma_theta.assign(n, T(0));
  }

  std::size_t cells() const { return static_cast<std::size_t>(r) * height * width; }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t cell_index(int rot, int row, int col) const {
    return (static_cast<std::size_t>(rot) * height + row) * width + col;
  }

  std::span<T> logits(int b) { return {attn_logits.data() + b * cells(), cells()}; }
  std::span<const T> logits(int b) const { return {attn_logits.data() + b * cells(), cells()}; }
  std::span<T> mu_z_of(int b) { return {mu_z.data() + b * cells() * z_dim, cells() * z_dim}; }
  std::span<const T> mu_z_of(int b) const {
    return {mu_z.data() + b * cells() * z_dim, cells() * z_dim};
  }
  std::span<T> log_sigma_z_of(int b) {
    return {log_sigma_z.data() + b * cells() * z_dim, cells() * z_dim};
  }
  std::span<const T> log_sigma_z_of(int b) const {
    return {log_sigma_z.data() + b * cells() * z_dim, cells() * z_dim};
  }
  std::span<T> mu_dtheta_of(int b) { return {mu_dtheta.data() + b * cells(), cells()}; }
  std::span<const T> mu_dtheta_of(int b) const {
    return {mu_dtheta.data() + b * cells(), cells()};
  }
  std::span<T> log_sigma_theta_of(int b) {
    return {log_sigma_theta.data() + b * cells(), cells()};
  }
  std::span<const T> log_sigma_theta_of(int b) const {
    return {log_sigma_theta.data() + b * cells(), cells()};
  }

  // Single-image view of image b as a batch-of-one field.
  PosteriorField slice(int b) const {
    PosteriorField out(1, r, height, width, z_dim);
    auto copy = [](std::span<const T> src, std::vector<T>& dst) {
      std::copy(src.begin(), src.end(), dst.begin());
    };
    copy(logits(b), out.attn_logits);
    copy(mu_z_of(b), out.mu_z);
    copy(log_sigma_z_of(b), out.log_sigma_z);
    copy(mu_dtheta_of(b), out.mu_dtheta);
    copy(log_sigma_theta_of(b), out.log_sigma_theta);
    return out;
  }

  bool same_shape(const PosteriorField& o) const {
    return batch == o.batch && r == o.r && height == o.height && width == o.width &&
           z_dim == o.z_dim;
  }
};

}  // namespace tvae
