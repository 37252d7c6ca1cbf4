#pragma once

// Rotation- and translation-equivariant inference network.
//
// Feature maps are Eigen matrices with one row per (channel, rotation) pair,
// row index = channel * r + rotation, and one column per pixel (row-major).

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tvae/errors.hpp"
#include "tvae/geometry.hpp"
#include "tvae/image.hpp"
#include "tvae/param.hpp"
#include "tvae/posterior.hpp"
#include "tvae/rng.hpp"

namespace tvae {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kLogSigmaMin = -7.0;
inline constexpr double kLogSigmaMax = 5.0;

struct GroupConvSpec {
  int r = 4;
  int first_kernel_size = 29;
  int channels = 128;
  int n_pointwise_layers = 3;
};

// One nonzero of a linear map between flattened k x k kernels:
// rotated[out] += weight * kernel[in].
struct KernelTap {
  int out;
  int in;
  double weight;
};

// Linear operator producing copy j of r: copy(p) = kernel(R(j 2pi / r) p) with p
// measured from the kernel centre (x = col, y = row). Quarter turns are exact
// index permutations; other angles use bilinear interpolation with zero fill.
inline std::vector<KernelTap> kernel_rotation_operator(int k, int j, int r) {
  if (k < 1 || r < 1) throw InvalidArgument("kernel rotation needs k >= 1 and r >= 1");
  std::vector<KernelTap> taps;
  j = ((j % r) + r) % r;
  if ((4 * j) % r == 0) {
    const int quarter = (4 * j / r) % 4;
    taps.reserve(static_cast<std::size_t>(k) * k);
    for (int row = 0; row < k; ++row) {
      for (int col = 0; col < k; ++col) {
        int sr = row, sc = col;
        for (int q = 0; q < quarter; ++q) {
          const int nr = sc, nc = k - 1 - sr;
          sr = nr;
          sc = nc;
        }
        taps.push_back({row * k + col, sr * k + sc, 1.0});
      }
    }
    return taps;
  }
  const double phi = 2.0 * std::numbers::pi * j / r;
  const double c = std::cos(phi), s = std::sin(phi);
  const double center = 0.5 * (k - 1);
  auto snap = [](double v) {
    const double rv = std::round(v);
    return std::abs(v - rv) < 1e-9 ? rv : v;
  };
  for (int row = 0; row < k; ++row) {
    for (int col = 0; col < k; ++col) {
      const double x = col - center, y = row - center;
      const double sc = snap(center + c * x - s * y);
      const double sr = snap(center + s * x + c * y);
      const int c0 = static_cast<int>(std::floor(sc));
      const int r0 = static_cast<int>(std::floor(sr));
      const double fc = sc - c0, fr = sr - r0;
      const int out = row * k + col;
      const int rr[2] = {r0, r0 + 1};
      const int cc[2] = {c0, c0 + 1};
      const double wr[2] = {1.0 - fr, fr};
      const double wc[2] = {1.0 - fc, fc};
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
          const double w = wr[a] * wc[b];
          if (w == 0.0 || rr[a] < 0 || rr[a] >= k || cc[b] < 0 || cc[b] >= k) continue;
          taps.push_back({out, rr[a] * k + cc[b], w});
        }
    }
  }
  return taps;
}

// Returns r rotated copies of a k x k kernel (row-major).
template <typename T>
std::vector<std::vector<T>> rotate_kernel_stack(std::span<const T> kernel, int k, int r) {
  if (static_cast<int>(kernel.size()) != k * k)
    throw ShapeError("rotate_kernel_stack: kernel is not k x k");
  std::vector<std::vector<T>> copies(r, std::vector<T>(static_cast<std::size_t>(k) * k, T(0)));
  for (int j = 0; j < r; ++j)
    for (const auto& tap : kernel_rotation_operator(k, j, r))
      copies[j][tap.out] += static_cast<T>(tap.weight) * kernel[tap.in];
  return copies;
}

template <typename T>
T leaky_relu(T v) {
  return v > T(0) ? v : static_cast<T>(kLeakySlope) * v;
}

template <typename T>
MatrixX<T> leaky_relu(const MatrixX<T>& m) {
  return m.unaryExpr([](T v) { return leaky_relu(v); });
}

// Multiplies `grad` in place by the leaky-ReLU derivative at `pre`.
template <typename T>
void leaky_relu_backward(const MatrixX<T>& pre, MatrixX<T>& grad) {
  const T slope = static_cast<T>(kLeakySlope);
  grad = grad.binaryExpr(pre, [slope](T g, T p) { return p > T(0) ? g : slope * g; });
}

// ---------------------------------------------------------------------------

// First layer: correlate r rotated copies of every kernel with the input.
// Stride 1, zero "same" padding, odd kernel size.
template <typename T>
class LiftingGroupConv {
 public:
  struct Cache {
    MatrixX<T> cols;  // (in_channels * k * k) x (H * W)
    int height = 0;
    int width = 0;
  };

  LiftingGroupConv() = default;
  LiftingGroupConv(int in_channels, int out_channels, int k, int r, const std::string& prefix)
      : in_channels_(in_channels), out_channels_(out_channels), k_(k), r_(r),
        weight_(prefix + ".weight", {out_channels, in_channels, k, k}),
        bias_(prefix + ".bias", {out_channels}) {
    if (k < 1 || k % 2 == 0)
      throw InvalidDimension("lifting kernel size must be odd and positive, got " +
                             std::to_string(k));
    if (r < 1) throw InvalidArgument("lifting convolution needs r >= 1");
    build_operators();
  }

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int kernel_size() const { return k_; }
  int r() const { return r_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }

  template <typename R>
  void init(R& rng) {
    init_uniform_fan_in(weight_, in_channels_ * k_ * k_, rng);
    init_uniform_fan_in(bias_, in_channels_ * k_ * k_, rng);
  }

  // Rotated weight matrix: row (c * r + j), column (ci * k * k + tap).
  MatrixX<T> rotated_weights() const {
    const int kk = k_ * k_;
    MatrixX<T> w = MatrixX<T>::Zero(out_channels_ * r_, in_channels_ * kk);
    for (int c = 0; c < out_channels_; ++c)
      for (int ci = 0; ci < in_channels_; ++ci) {
        const T* kern = weight_.value.data() + (static_cast<std::size_t>(c) * in_channels_ + ci) * kk;
        for (int j = 0; j < r_; ++j)
          for (const auto& tap : operators_[j])
            w(c * r_ + j, ci * kk + tap.out) += static_cast<T>(tap.weight) * kern[tap.in];
      }
    return w;
  }

  MatrixX<T> forward(std::span<const T> image, int height, int width, Cache* cache = nullptr) const {
    if (static_cast<std::size_t>(in_channels_) * height * width != image.size())
      throw ShapeError("lifting convolution: input has wrong channel count or size");
    if (k_ > height || k_ > width)
      throw InvalidDimension("lifting kernel (" + std::to_string(k_) + ") larger than image (" +
                             std::to_string(height) + "x" + std::to_string(width) + ")");
    MatrixX<T> cols = im2col(image, height, width);
    MatrixX<T> out = rotated_weights() * cols;
    for (int c = 0; c < out_channels_; ++c)
      for (int j = 0; j < r_; ++j) out.row(c * r_ + j).array() += bias_.value[c];
    if (cache) {
      cache->cols = std::move(cols);
      cache->height = height;
      cache->width = width;
    }
    return out;
  }

  // Accumulates parameter gradients; the input gradient is not needed.
  void backward(const MatrixX<T>& grad_out, const Cache& cache) {
    const int kk = k_ * k_;
    const MatrixX<T> grad_w = grad_out * cache.cols.transpose();
    for (int c = 0; c < out_channels_; ++c) {
      for (int j = 0; j < r_; ++j) bias_.grad[c] += grad_out.row(c * r_ + j).sum();
      for (int ci = 0; ci < in_channels_; ++ci) {
        T* g = weight_.grad.data() + (static_cast<std::size_t>(c) * in_channels_ + ci) * kk;
        for (int j = 0; j < r_; ++j)
          for (const auto& tap : operators_[j])
            g[tap.in] += static_cast<T>(tap.weight) * grad_w(c * r_ + j, ci * kk + tap.out);
      }
    }
  }

  ParamRefs<T> parameters() { return {&weight_, &bias_}; }

 private:
  void build_operators() {
    operators_.clear();
    for (int j = 0; j < r_; ++j) operators_.push_back(kernel_rotation_operator(k_, j, r_));
  }

  MatrixX<T> im2col(std::span<const T> image, int height, int width) const {
    const int pad = (k_ - 1) / 2;
    const int kk = k_ * k_;
    MatrixX<T> cols = MatrixX<T>::Zero(in_channels_ * kk, static_cast<Eigen::Index>(height) * width);
    for (int row = 0; row < height; ++row)
      for (int col = 0; col < width; ++col) {
        T* dst = cols.col(row * width + col).data();
        for (int ci = 0; ci < in_channels_; ++ci) {
          const T* plane = image.data() + static_cast<std::size_t>(ci) * height * width;
          for (int u = 0; u < k_; ++u) {
            const int sr = row + u - pad;
            if (sr < 0 || sr >= height) continue;
            for (int v = 0; v < k_; ++v) {
              const int sc = col + v - pad;
              if (sc < 0 || sc >= width) continue;
              dst[ci * kk + u * k_ + v] = plane[sr * width + sc];
            }
          }
        }
      }
    return cols;
  }

  int in_channels_ = 0;
  int out_channels_ = 0;
  int k_ = 1;
  int r_ = 1;
  Param<T> weight_;
  Param<T> bias_;
  std::vector<std::vector<KernelTap>> operators_;
};

// 1x1 group convolution on P_r features. Weight [out, in, r] is indexed by
// relative rotation s: out[(co, j)] = sum_{ci, s} W[co, ci, s] in[(ci, j - s mod r)] + b[co].
template <typename T>
class PointwiseGroupConv {
 public:
  PointwiseGroupConv() = default;
  PointwiseGroupConv(int in_channels, int out_channels, int r, const std::string& prefix)
      : in_channels_(in_channels), out_channels_(out_channels), r_(r),
        weight_(prefix + ".weight", {out_channels, in_channels, r}),
        bias_(prefix + ".bias", {out_channels}) {
    if (r < 1) throw InvalidArgument("pointwise group convolution needs r >= 1");
  }

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  int r() const { return r_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }

  template <typename R>
  void init(R& rng) {
    init_uniform_fan_in(weight_, in_channels_ * r_, rng);
    init_uniform_fan_in(bias_, in_channels_ * r_, rng);
  }

  // Sets W[c, c, 0] = 1 and everything else to zero.
  void set_identity() {
    std::fill(weight_.value.begin(), weight_.value.end(), T(0));
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
    for (int c = 0; c < std::min(in_channels_, out_channels_); ++c)
      weight_.value[(static_cast<std::size_t>(c) * in_channels_ + c) * r_] = T(1);
  }

  MatrixX<T> expanded_weights() const {
    MatrixX<T> w(out_channels_ * r_, in_channels_ * r_);
    for (int co = 0; co < out_channels_; ++co)
      for (int ci = 0; ci < in_channels_; ++ci)
        for (int j = 0; j < r_; ++j)
          for (int i = 0; i < r_; ++i) {
            const int s = ((j - i) % r_ + r_) % r_;
            w(co * r_ + j, ci * r_ + i) = weight_.value[(static_cast<std::size_t>(co) * in_channels_ + ci) * r_ + s];
          }
    return w;
  }

  MatrixX<T> forward(const MatrixX<T>& in) const {
    if (in.rows() != static_cast<Eigen::Index>(in_channels_) * r_)
      throw ShapeError("pointwise group convolution: expected " + std::to_string(in_channels_) +
                       " channels x " + std::to_string(r_) + " rotations, got " +
                       std::to_string(in.rows()) + " rows");
    MatrixX<T> out = expanded_weights() * in;
    for (int co = 0; co < out_channels_; ++co)
      for (int j = 0; j < r_; ++j) out.row(co * r_ + j).array() += bias_.value[co];
    return out;
  }

  // Accumulates parameter gradients and returns the input gradient.
  MatrixX<T> backward(const MatrixX<T>& grad_out, const MatrixX<T>& in) {
    const MatrixX<T> gw = grad_out * in.transpose();
    for (int co = 0; co < out_channels_; ++co) {
      for (int j = 0; j < r_; ++j) bias_.grad[co] += grad_out.row(co * r_ + j).sum();
      for (int ci = 0; ci < in_channels_; ++ci)
        for (int j = 0; j < r_; ++j)
          for (int i = 0; i < r_; ++i) {
            const int s = ((j - i) % r_ + r_) % r_;
            weight_.grad[(static_cast<std::size_t>(co) * in_channels_ + ci) * r_ + s] +=
                gw(co * r_ + j, ci * r_ + i);
          }
    }
    return expanded_weights().transpose() * grad_out;
  }

  ParamRefs<T> parameters() { return {&weight_, &bias_}; }

 private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  int r_ = 1;
  Param<T> weight_;
  Param<T> bias_;
};

// Learned per-channel linear map over the rotation axis, [C, r] -> [C].
template <typename T>
class RotationCollapse {
 public:
  RotationCollapse() = default;
  RotationCollapse(int channels, int r, const std::string& prefix)
      : channels_(channels), r_(r), weight_(prefix + ".weight", {channels, r}),
        bias_(prefix + ".bias", {channels}) {}

  template <typename R>
  void init(R& rng) {
    init_uniform_fan_in(weight_, r_, rng);
    init_uniform_fan_in(bias_, r_, rng);
  }

  MatrixX<T> forward(const MatrixX<T>& in) const {
    MatrixX<T> out(channels_, in.cols());
    for (int c = 0; c < channels_; ++c) {
      out.row(c).setConstant(bias_.value[c]);
      for (int j = 0; j < r_; ++j) out.row(c) += weight_.value[c * r_ + j] * in.row(c * r_ + j);
    }
    return out;
  }

  MatrixX<T> backward(const MatrixX<T>& grad_out, const MatrixX<T>& in) {
    MatrixX<T> grad_in(static_cast<Eigen::Index>(channels_) * r_, in.cols());
    for (int c = 0; c < channels_; ++c) {
      bias_.grad[c] += grad_out.row(c).sum();
      for (int j = 0; j < r_; ++j) {
        weight_.grad[c * r_ + j] += grad_out.row(c).dot(in.row(c * r_ + j));
        grad_in.row(c * r_ + j) = weight_.value[c * r_ + j] * grad_out.row(c);
      }
    }
    return grad_in;
  }

  ParamRefs<T> parameters() { return {&weight_, &bias_}; }

 private:
  int channels_ = 0;
  int r_ = 1;
  Param<T> weight_;
  Param<T> bias_;
};

// ---------------------------------------------------------------------------

struct EncoderConfig {
  int in_channels = 1;
  GroupConvSpec conv;
  int z_dim = 2;
  // Collapse the rotation axis before the posterior heads (posterior has r = 1).
  bool collapse_rotations = false;

  int head_maps() const { return 1 + 2 * z_dim + 2; }
  int posterior_r() const { return collapse_rotations ? 1 : conv.r; }
};

template <typename T>
class Encoder {
 public:
  struct Cache {
    typename LiftingGroupConv<T>::Cache lifting;
    std::vector<MatrixX<T>> pre;   // pre-activations of lifting + hidden layers
    std::vector<MatrixX<T>> post;  // activations fed to the next layer
    MatrixX<T> collapsed;          // input to the head when collapsing
    MatrixX<T> head_out;
  };

  Encoder() = default;
  explicit Encoder(const EncoderConfig& cfg) : cfg_(cfg) {
    if (cfg.conv.n_pointwise_layers < 1)
      throw InvalidArgument("encoder needs at least one pointwise (head) layer");
    if (cfg.z_dim < 1) throw InvalidArgument("z_dim must be >= 1");
    const int r = cfg.conv.r;
    const int c = cfg.conv.channels;
    lifting_ = LiftingGroupConv<T>(cfg.in_channels, c, cfg.conv.first_kernel_size, r, "encoder.lift");
    for (int l = 0; l + 1 < cfg.conv.n_pointwise_layers; ++l)
      hidden_.emplace_back(c, c, r, "encoder.pw" + std::to_string(l));
    if (cfg.collapse_rotations) {
      collapse_ = RotationCollapse<T>(c, r, "encoder.collapse");
      head_ = PointwiseGroupConv<T>(c, cfg.head_maps(), 1, "encoder.head");
    } else {
      head_ = PointwiseGroupConv<T>(c, cfg.head_maps(), r, "encoder.head");
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  LiftingGroupConv<T>& lifting() { return lifting_; }
  std::vector<PointwiseGroupConv<T>>& hidden() { return hidden_; }
  PointwiseGroupConv<T>& head() { return head_; }

  template <typename R>
  void init(R& rng) {
    lifting_.init(rng);
    for (auto& h : hidden_) h.init(rng);
    if (cfg_.collapse_rotations) collapse_.init(rng);
    head_.init(rng);
  }

  ParamRefs<T> parameters() {
    ParamRefs<T> out = lifting_.parameters();
    for (auto& h : hidden_)
      for (auto* p : h.parameters()) out.push_back(p);
    if (cfg_.collapse_rotations)
      for (auto* p : collapse_.parameters()) out.push_back(p);
    for (auto* p : head_.parameters()) out.push_back(p);
    return out;
  }

  // Raw head output for one image: rows (map, rotation), columns pixels.
  MatrixX<T> forward_maps(std::span<const T> image, int height, int width, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.pre.clear();
    c.post.clear();
    c.pre.push_back(lifting_.forward(image, height, width, &c.lifting));
    c.post.push_back(leaky_relu(c.pre.back()));
    for (const auto& h : hidden_) {
      c.pre.push_back(h.forward(c.post.back()));
      c.post.push_back(leaky_relu(c.pre.back()));
    }
    if (cfg_.collapse_rotations) {
      c.collapsed = collapse_.forward(c.post.back());
      c.head_out = head_.forward(c.collapsed);
    } else {
      c.head_out = head_.forward(c.post.back());
    }
    if (!cache) return std::move(local.head_out);
    return c.head_out;
  }

  // Scatters head maps of one image into slot b of a field.
  void maps_to_field(const MatrixX<T>& maps, PosteriorField<T>& field, int b) const {
    const int r = field.r;
    const int zd = field.z_dim;
    const std::size_t plane = field.plane();
    auto logits = field.logits(b);
    auto mu_z = field.mu_z_of(b);
    auto ls_z = field.log_sigma_z_of(b);
    auto mu_t = field.mu_dtheta_of(b);
    auto ls_t = field.log_sigma_theta_of(b);
    for (int j = 0; j < r; ++j)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t cell = j * plane + p;
        logits[cell] = maps(0 * r + j, p);
        for (int d = 0; d < zd; ++d) {
          mu_z[cell * zd + d] = maps((1 + d) * r + j, p);
          ls_z[cell * zd + d] = maps((1 + zd + d) * r + j, p);
        }
        mu_t[cell] = maps((1 + 2 * zd) * r + j, p);
        ls_t[cell] = maps((2 + 2 * zd) * r + j, p);
      }
  }

  // Gathers a field gradient for image b back into head-map layout.
  MatrixX<T> field_grad_to_maps(const PosteriorField<T>& grad, int b) const {
    const int r = grad.r;
    const int zd = grad.z_dim;
    const std::size_t plane = grad.plane();
    MatrixX<T> maps(static_cast<Eigen::Index>(cfg_.head_maps()) * r, static_cast<Eigen::Index>(plane));
    auto logits = grad.logits(b);
    auto mu_z = grad.mu_z_of(b);
    auto ls_z = grad.log_sigma_z_of(b);
    auto mu_t = grad.mu_dtheta_of(b);
    auto ls_t = grad.log_sigma_theta_of(b);
    for (int j = 0; j < r; ++j)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t cell = j * plane + p;
        maps(0 * r + j, p) = logits[cell];
        for (int d = 0; d < zd; ++d) {
          maps((1 + d) * r + j, p) = mu_z[cell * zd + d];
          maps((1 + zd + d) * r + j, p) = ls_z[cell * zd + d];
        }
        maps((1 + 2 * zd) * r + j, p) = mu_t[cell];
        maps((2 + 2 * zd) * r + j, p) = ls_t[cell];
      }
    return maps;
  }

  // Accumulates parameter gradients given d(loss)/d(head maps).
  void backward(const MatrixX<T>& grad_maps, const Cache& cache) {
    MatrixX<T> g;
    if (cfg_.collapse_rotations) {
      MatrixX<T> gc = head_.backward(grad_maps, cache.collapsed);
      g = collapse_.backward(gc, cache.post.back());
    } else {
      g = head_.backward(grad_maps, cache.post.back());
    }
    for (int l = static_cast<int>(hidden_.size()) - 1; l >= 0; --l) {
      leaky_relu_backward(cache.pre[l + 1], g);
      g = hidden_[l].backward(g, cache.post[l]);
    }
    leaky_relu_backward(cache.pre[0], g);
    lifting_.backward(g, cache.lifting);
  }

  // Runs the network on every image of the batch.
  PosteriorField<T> encode(const ImageBatch<T>& images) const {
    if (images.channels != cfg_.in_channels)
      throw ShapeError("encode: expected " + std::to_string(cfg_.in_channels) +
                       " input channels, got " + std::to_string(images.channels));
    PosteriorField<T> field(images.n, cfg_.posterior_r(), images.height, images.width, cfg_.z_dim);
    for (int b = 0; b < images.n; ++b)
      maps_to_field(forward_maps(images.image(b), images.height, images.width), field, b);
    return field;
  }

 private:
  EncoderConfig cfg_;
  LiftingGroupConv<T> lifting_;
  std::vector<PointwiseGroupConv<T>> hidden_;
  RotationCollapse<T> collapse_;
  PointwiseGroupConv<T> head_;
};

}  // namespace tvae
