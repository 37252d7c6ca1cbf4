#pragma once

// Spatial generator: maps (z, transformed pixel coordinate) to the parameters
// of that pixel's distribution. Coordinates pass through random Fourier
// features and one linear layer, z through another; the two are summed and
// processed by shared fully-connected layers.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tvae/encoder.hpp"
#include "tvae/errors.hpp"
#include "tvae/geometry.hpp"
#include "tvae/param.hpp"
#include "tvae/rng.hpp"

namespace tvae {

enum class OutputMode { Bernoulli, Gaussian, Rgb };

inline constexpr double kProbClamp = 1e-6;

inline std::string to_string(OutputMode m) {
  switch (m) {
    case OutputMode::Bernoulli: return "bernoulli";
    case OutputMode::Gaussian: return "gaussian";
    case OutputMode::Rgb: return "rgb";
  }
  return "bernoulli";
}

inline OutputMode output_mode_from_string(const std::string& s) {
  if (s == "bernoulli") return OutputMode::Bernoulli;
  if (s == "gaussian") return OutputMode::Gaussian;
  if (s == "rgb") return OutputMode::Rgb;
  throw InvalidArgument("unknown output mode '" + s + "'");
}

struct GeneratorConfig {
  int n_layers = 3;  // parallel input layer + (n_layers - 1) shared hidden layers
  int hidden_units = 512;
  OutputMode output_mode = OutputMode::Bernoulli;
  bool per_pixel_sigma = false;
  int n_freq = 64;
  double fourier_scale = 1.0;
  int z_dim = 2;

  int channels() const { return output_mode == OutputMode::Rgb ? 3 : 1; }
  bool has_sigma() const { return output_mode != OutputMode::Bernoulli; }
  int out_dim() const { return channels() * ((has_sigma() && per_pixel_sigma) ? 2 : 1); }
};

// Per-pixel distribution parameters, one row per pixel and one column per
// channel. `value` holds probabilities (bernoulli) or means.
template <typename T>
struct PixelParams {
  OutputMode mode = OutputMode::Bernoulli;
  MatrixX<T> value;
  MatrixX<T> log_sigma;  // empty in bernoulli mode

  Eigen::Index pixels() const { return value.rows(); }
  Eigen::Index channels() const { return value.cols(); }
};

template <typename T>
using RowMajorMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
class Generator {
 public:
  struct Cache {
    Coords<T> coords;
    MatrixX<T> features;            // P x 2 n_freq
    std::vector<T> z;
    std::vector<MatrixX<T>> pre;    // pre-activations, P x hidden
    std::vector<MatrixX<T>> post;   // activations, P x hidden
    MatrixX<T> raw;                 // P x out_dim, before squashing
  };

  Generator() = default;
  Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.n_layers < 1) throw InvalidArgument("generator needs n_layers >= 1");
    if (cfg.hidden_units < 1) throw InvalidArgument("generator needs hidden_units >= 1");
    if (cfg.z_dim < 1) throw InvalidArgument("generator needs z_dim >= 1");
    fourier_ = FourierFeatureSpec<T>::sample(cfg.n_freq, cfg.fourier_scale, rng);
    const int h = cfg.hidden_units;
    freq_ = Param<T>("generator.fourier.freq", {cfg.n_freq, 2}, false);
    sync_fourier_to_param();
    coord_w_ = Param<T>("generator.coord.weight", {h, 2 * cfg.n_freq});
    coord_b_ = Param<T>("generator.coord.bias", {h});
    latent_w_ = Param<T>("generator.latent.weight", {h, cfg.z_dim});
    for (int l = 1; l < cfg.n_layers; ++l) {
      shared_w_.emplace_back("generator.shared" + std::to_string(l) + ".weight", std::vector<int>{h, h});
      shared_b_.emplace_back("generator.shared" + std::to_string(l) + ".bias", std::vector<int>{h});
    }
    out_w_ = Param<T>("generator.out.weight", {cfg.out_dim(), h});
    out_b_ = Param<T>("generator.out.bias", {cfg.out_dim()});
    if (cfg.has_sigma() && !cfg.per_pixel_sigma)
      log_sigma_ = Param<T>("generator.log_sigma", {cfg.channels()});

    init_uniform_fan_in(coord_w_, 2 * cfg.n_freq, rng);
    init_uniform_fan_in(coord_b_, 2 * cfg.n_freq, rng);
    init_uniform_fan_in(latent_w_, cfg.z_dim, rng);
    for (std::size_t l = 0; l < shared_w_.size(); ++l) {
      init_uniform_fan_in(shared_w_[l], h, rng);
      init_uniform_fan_in(shared_b_[l], h, rng);
    }
    init_uniform_fan_in(out_w_, h, rng);
    init_uniform_fan_in(out_b_, h, rng);
  }

  const GeneratorConfig& config() const { return cfg_; }
  const FourierFeatureSpec<T>& fourier() const { return fourier_; }

  // Re-reads the Fourier matrix from its parameter (after loading a checkpoint).
  void sync_fourier_from_param() {
    for (int k = 0; k < cfg_.n_freq; ++k)
      for (int d = 0; d < 2; ++d) fourier_.frequencies(k, d) = freq_.value[k * 2 + d];
  }

  ParamRefs<T> parameters() {
    ParamRefs<T> out{&freq_, &coord_w_, &coord_b_, &latent_w_};
    for (std::size_t l = 0; l < shared_w_.size(); ++l) {
      out.push_back(&shared_w_[l]);
      out.push_back(&shared_b_[l]);
    }
    out.push_back(&out_w_);
    out.push_back(&out_b_);
    if (cfg_.has_sigma() && !cfg_.per_pixel_sigma) out.push_back(&log_sigma_);
    return out;
  }

  // Distribution parameters for pixels at already-transformed coordinates.
  PixelParams<T> decode_pixels(std::span<const T> z, const Coords<T>& coords, Cache* cache = nullptr) const {
    if (static_cast<int>(z.size()) != cfg_.z_dim)
      throw ShapeError("decode_pixels: z has dimension " + std::to_string(z.size()) + ", expected " +
                       std::to_string(cfg_.z_dim));
    const int h = cfg_.hidden_units;
    MatrixX<T> features = fourier_expand(coords, fourier_);
    VectorX<T> zvec = Eigen::Map<const VectorX<T>>(z.data(), cfg_.z_dim);
    VectorX<T> latent = RowMajorMap<T>(latent_w_.value.data(), h, cfg_.z_dim) * zvec +
                        Eigen::Map<const VectorX<T>>(coord_b_.value.data(), h);
    MatrixX<T> pre = features * RowMajorMap<T>(coord_w_.value.data(), h, 2 * cfg_.n_freq).transpose();
    pre.rowwise() += latent.transpose();
    std::vector<MatrixX<T>> pres, posts;
    pres.push_back(std::move(pre));
    posts.push_back(leaky_relu(pres.back()));
    for (std::size_t l = 0; l < shared_w_.size(); ++l) {
      MatrixX<T> next = posts.back() * RowMajorMap<T>(shared_w_[l].value.data(), h, h).transpose();
      next.rowwise() += Eigen::Map<const VectorX<T>>(shared_b_[l].value.data(), h).transpose();
      pres.push_back(std::move(next));
      posts.push_back(leaky_relu(pres.back()));
    }
    MatrixX<T> raw = posts.back() * RowMajorMap<T>(out_w_.value.data(), cfg_.out_dim(), h).transpose();
    raw.rowwise() += Eigen::Map<const VectorX<T>>(out_b_.value.data(), cfg_.out_dim()).transpose();

    PixelParams<T> params;
    params.mode = cfg_.output_mode;
    const int ch = cfg_.channels();
    if (cfg_.output_mode == OutputMode::Bernoulli) {
      params.value = raw.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
    } else {
      params.value = raw.leftCols(ch);
      if (cfg_.per_pixel_sigma) {
        params.log_sigma = raw.rightCols(ch).unaryExpr([](T v) { return clamp_sigma(v); });
      } else {
        params.log_sigma.resize(raw.rows(), ch);
        for (int c = 0; c < ch; ++c) params.log_sigma.col(c).setConstant(clamp_sigma(log_sigma_.value[c]));
      }
    }
    if (cache) {
      cache->coords = coords;
      cache->features = std::move(features);
      cache->z.assign(z.begin(), z.end());
      cache->pre = std::move(pres);
      cache->post = std::move(posts);
      cache->raw = std::move(raw);
    }
    return params;
  }

  // Renders an object with latent z, rotated by theta and centred at t.
  PixelParams<T> render(std::span<const T> z, T theta, const Vec2<T>& t, const CoordinateGrid<T>& grid,
                        Cache* cache = nullptr) const {
    return decode_pixels(z, transform_coordinates(grid, RigidTransform<T>::object_pose(theta, t)), cache);
  }

  struct InputGrad {
    std::vector<T> z;
    Coords<T> coords;
  };

  // Accumulates parameter gradients from d(loss)/d(params) and returns the
  // gradient with respect to z and the transformed coordinates.
  InputGrad backward(const PixelParams<T>& params, const MatrixX<T>& grad_value,
                     const MatrixX<T>& grad_log_sigma, const Cache& cache) {
    const int h = cfg_.hidden_units;
    const int ch = cfg_.channels();
    const Eigen::Index npix = cache.raw.rows();
    MatrixX<T> g_raw(npix, cfg_.out_dim());
    if (cfg_.output_mode == OutputMode::Bernoulli) {
      g_raw = grad_value.binaryExpr(params.value, [](T g, T p) { return g * p * (T(1) - p); });
    } else {
      g_raw.leftCols(ch) = grad_value;
      if (cfg_.per_pixel_sigma) {
        g_raw.rightCols(ch) = grad_log_sigma.binaryExpr(cache.raw.rightCols(ch),
                                                        [](T g, T v) { return g * sigma_mask(v); });
      } else {
        for (int c = 0; c < ch; ++c)
          log_sigma_.grad[c] += grad_log_sigma.col(c).sum() * sigma_mask(log_sigma_.value[c]);
      }
    }
    accumulate_linear(out_w_, out_b_, g_raw, cache.post.back());
    MatrixX<T> g = g_raw * RowMajorMap<T>(out_w_.value.data(), cfg_.out_dim(), h);
    for (int l = static_cast<int>(shared_w_.size()) - 1; l >= 0; --l) {
      leaky_relu_backward(cache.pre[l + 1], g);
      accumulate_linear(shared_w_[l], shared_b_[l], g, cache.post[l]);
      g = g * RowMajorMap<T>(shared_w_[l].value.data(), h, h);
    }
    leaky_relu_backward(cache.pre[0], g);
    // First layer: coordinate branch (with bias) plus broadcast latent branch.
    accumulate_linear(coord_w_, coord_b_, g, cache.features);
    const VectorX<T> g_latent = g.colwise().sum().transpose();
    for (int u = 0; u < h; ++u)
      for (int d = 0; d < cfg_.z_dim; ++d) latent_w_.grad[u * cfg_.z_dim + d] += g_latent(u) * cache.z[d];

    InputGrad out;
    const VectorX<T> gz = RowMajorMap<T>(latent_w_.value.data(), h, cfg_.z_dim).transpose() * g_latent;
    out.z.assign(gz.data(), gz.data() + cfg_.z_dim);

    // d features / d coords: sin' = 2 pi cos F, cos' = -2 pi sin F.
    const int nf = cfg_.n_freq;
    const MatrixX<T> g_feat = g * RowMajorMap<T>(coord_w_.value.data(), h, 2 * nf);
    const T two_pi = T(2) * std::numbers::pi_v<T>;
    MatrixX<T> g_proj = two_pi * (g_feat.leftCols(nf).cwiseProduct(cache.features.rightCols(nf)) -
                                  g_feat.rightCols(nf).cwiseProduct(cache.features.leftCols(nf)));
    out.coords = g_proj * fourier_.frequencies;
    return out;
  }

  void sync_fourier_to_param() {
    for (int k = 0; k < cfg_.n_freq; ++k)
      for (int d = 0; d < 2; ++d) freq_.value[k * 2 + d] = fourier_.frequencies(k, d);
  }

 private:
  static T clamp_sigma(T v) {
    return std::clamp(v, static_cast<T>(kLogSigmaMin), static_cast<T>(kLogSigmaMax));
  }
  static T sigma_mask(T v) {
    return (v > static_cast<T>(kLogSigmaMin) && v < static_cast<T>(kLogSigmaMax)) ? T(1) : T(0);
  }

  static void accumulate_linear(Param<T>& w, Param<T>& b, const MatrixX<T>& grad_out, const MatrixX<T>& in) {
    const Eigen::Index rows = grad_out.cols(), cols = in.cols();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(w.grad.data(), rows, cols);
    gw.noalias() += grad_out.transpose() * in;
    Eigen::Map<VectorX<T>> gb(b.grad.data(), rows);
    gb += grad_out.colwise().sum().transpose();
  }

  GeneratorConfig cfg_;
  FourierFeatureSpec<T> fourier_;
  Param<T> freq_;
  Param<T> coord_w_, coord_b_, latent_w_;
  std::vector<Param<T>> shared_w_, shared_b_;
  Param<T> out_w_, out_b_;
  Param<T> log_sigma_;
};

// Gradient of a log-likelihood with respect to PixelParams.
template <typename T>
struct PixelParamsGrad {
  MatrixX<T> value;
  MatrixX<T> log_sigma;
};

// log p(y | params) summed over pixels and channels. `image` is planar
// [channel][pixel]. Bernoulli probabilities are clamped to [1e-6, 1 - 1e-6];
// clamped pixels pass no gradient.
template <typename T>
double reconstruction_log_prob(const PixelParams<T>& params, std::span<const T> image,
                               PixelParamsGrad<T>* grad = nullptr) {
  const Eigen::Index npix = params.pixels(), ch = params.channels();
  if (static_cast<Eigen::Index>(image.size()) != npix * ch)
    throw ShapeError("reconstruction_log_prob: image has " + std::to_string(image.size()) +
                     " values, parameters describe " + std::to_string(npix * ch));
  if (grad) {
    grad->value = MatrixX<T>::Zero(npix, ch);
    if (params.mode != OutputMode::Bernoulli) grad->log_sigma = MatrixX<T>::Zero(npix, ch);
  }
  double total = 0.0;
  if (params.mode == OutputMode::Bernoulli) {
    const double lo = kProbClamp, hi = 1.0 - kProbClamp;
    for (Eigen::Index c = 0; c < ch; ++c)
      for (Eigen::Index p = 0; p < npix; ++p) {
        const double y = static_cast<double>(image[c * npix + p]);
        const double raw = static_cast<double>(params.value(p, c));
        const double prob = std::clamp(raw, lo, hi);
        total += y * std::log(prob) + (1.0 - y) * std::log1p(-prob);
        if (grad && raw > lo && raw < hi)
          grad->value(p, c) = static_cast<T>(y / prob - (1.0 - y) / (1.0 - prob));
      }
  } else {
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    for (Eigen::Index c = 0; c < ch; ++c)
      for (Eigen::Index p = 0; p < npix; ++p) {
        const double y = static_cast<double>(image[c * npix + p]);
        const double mu = static_cast<double>(params.value(p, c));
        const double ls = static_cast<double>(params.log_sigma(p, c));
        const double inv_var = std::exp(-2.0 * ls);
        const double diff = y - mu;
        total += -half_log_2pi - ls - 0.5 * diff * diff * inv_var;
        if (grad) {
          grad->value(p, c) = static_cast<T>(diff * inv_var);
          grad->log_sigma(p, c) = static_cast<T>(-1.0 + diff * diff * inv_var);
        }
      }
  }
  return total;
}

// Chains d(loss)/d(transformed coords) through x' = R(theta)(x - t).
template <typename T>
void pose_backward(const Coords<T>& grid_coords, T theta, const Vec2<T>& t, const Coords<T>& grad_coords,
                   T& grad_theta, Vec2<T>& grad_t) {
  const Mat2<T> rot = rotation_matrix(theta);
  const Mat2<T> drot = rotation_matrix_derivative(theta);
  Vec2<T> sum_g = Vec2<T>::Zero();
  Mat2<T> outer = Mat2<T>::Zero();  // sum_p g_p (x_p - t)^T
  for (Eigen::Index p = 0; p < grid_coords.rows(); ++p) {
    const Vec2<T> g = grad_coords.row(p).transpose();
    const Vec2<T> rel = grid_coords.row(p).transpose() - t;
    sum_g += g;
    outer += g * rel.transpose();
  }
  grad_theta = (drot.cwiseProduct(outer)).sum();
  grad_t = -(rot.transpose() * sum_g);
}

}  // namespace tvae
