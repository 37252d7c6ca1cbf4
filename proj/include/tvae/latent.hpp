#pragma once

// Structured approximate posterior: joint categorical over (rotation
// component, pixel), Gaussians over the residual angle and z, the factorised
// prior and the closed-form KL decomposition.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "tvae/encoder.hpp"
#include "tvae/errors.hpp"
#include "tvae/geometry.hpp"
#include "tvae/posterior.hpp"
#include "tvae/rng.hpp"

namespace tvae {

enum class ThetaPrior { Uniform, Normal };

struct PriorSpec {
  int r = 1;
  int height = 0;
  int width = 0;
  int z_dim = 0;
  std::vector<double> p_r;
  double theta_component_std = std::numbers::pi;
  ThetaPrior theta_prior = ThetaPrior::Uniform;
  double theta_prior_std = 0.0;
  double translation_std_x = 1.0;  // normalised units
  double translation_std_y = 1.0;
  std::vector<double> log_p_t;     // over the H*W grid, sums to 1 in probability
  bool use_offsets = true;

  double group_angle(int j) const { return 2.0 * std::numbers::pi * j / r; }
  double theta_offset(int j) const { return use_offsets ? group_angle(j) : 0.0; }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double log_p_cell(std::size_t cell) const {
    return log_p_t[cell % plane()] + std::log(p_r[cell / plane()]);
  }
};

// Builds the factorised prior p(t) p(r) p(theta | r) p(z).
//
// translation_std_px is converted to normalised units per axis
// (px * 2 / (W - 1)). With a Normal dataset-level theta prior, p(r) is
// proportional to that density at each group angle (wrapped to (-pi, pi]).
inline PriorSpec make_prior(int r, int height, int width, int z_dim,
                            ThetaPrior theta_prior = ThetaPrior::Uniform,
                            double theta_prior_std = 0.0, double translation_std_px = 5.0,
                            bool use_offsets = true) {
  if (r < 1) throw InvalidArgument("prior needs r >= 1");
  if (height < 2 || width < 2) throw InvalidDimension("prior grid needs H, W >= 2");
  if (!(translation_std_px > 0.0)) throw InvalidArgument("translation std must be positive");
  PriorSpec p;
  p.r = r;
  p.height = height;
  p.width = width;
  p.z_dim = z_dim;
  p.theta_component_std = std::numbers::pi / r;
  p.theta_prior = theta_prior;
  p.theta_prior_std = theta_prior_std;
  p.use_offsets = use_offsets;
  p.translation_std_x = translation_std_px * 2.0 / (width - 1);
  p.translation_std_y = translation_std_px * 2.0 / (height - 1);

  p.p_r.assign(r, 1.0 / r);
  if (theta_prior == ThetaPrior::Normal) {
    if (!(theta_prior_std > 0.0)) throw InvalidArgument("normal theta prior needs std > 0");
    double total = 0.0;
    for (int j = 0; j < r; ++j) {
      const double a = wrap_angle(p.group_angle(j)) / theta_prior_std;
      p.p_r[j] = std::exp(-0.5 * a * a);
      total += p.p_r[j];
    }
    for (auto& v : p.p_r) v /= total;
  }

  const auto grid = make_coordinate_grid<double>(height, width);
  p.log_p_t.resize(p.plane());
  double max_v = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < p.plane(); ++k) {
    const double x = grid.coords(k, 0) / p.translation_std_x;
    const double y = grid.coords(k, 1) / p.translation_std_y;
    p.log_p_t[k] = -0.5 * (x * x + y * y);
    max_v = std::max(max_v, p.log_p_t[k]);
  }
  double sum = 0.0;
  for (double v : p.log_p_t) sum += std::exp(v - max_v);
  const double lse = max_v + std::log(sum);
  for (auto& v : p.log_p_t) v -= lse;
  return p;
}

template <typename T>
T clamp_log_sigma(T v) {
  return std::clamp(v, static_cast<T>(kLogSigmaMin), static_cast<T>(kLogSigmaMax));
}

template <typename T>
T log_sigma_mask(T v) {
  return (v > static_cast<T>(kLogSigmaMin) && v < static_cast<T>(kLogSigmaMax)) ? T(1) : T(0);
}

// Softmax over all cells of one image; `out` may alias nothing in `logits`.
template <typename T>
void softmax_into(std::span<const T> logits, std::span<T> out) {
  T max_v = -std::numeric_limits<T>::infinity();
  for (T v : logits) {
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite attention logit");
    max_v = std::max(max_v, v);
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = static_cast<T>(std::exp(static_cast<double>(logits[c] - max_v)));
    sum += static_cast<double>(out[c]);
  }
  const T inv = static_cast<T>(1.0 / sum);
  for (auto& v : out) v *= inv;
}

// q(t, r | y): softmax jointly over (r, H, W) for each image.
template <typename T>
std::vector<T> attention_softmax(const PosteriorField<T>& field) {
  std::vector<T> q(field.attn_logits.size());
  for (int b = 0; b < field.batch; ++b)
    softmax_into<T>(field.logits(b), std::span<T>(q.data() + b * field.cells(), field.cells()));
  return q;
}

// Relaxed one-hot from logits and pre-drawn standard Gumbel noise.
template <typename T>
std::vector<T> gumbel_softmax_from_logits(std::span<const T> logits, std::span<const double> gumbel,
                                          double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("gumbel-softmax temperature must be > 0");
  if (gumbel.size() != logits.size()) throw ShapeError("gumbel noise size mismatch");
  std::vector<T> y(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c)
    y[c] = static_cast<T>((static_cast<double>(logits[c]) + gumbel[c]) / temperature);
  std::vector<T> w(logits.size());
  softmax_into<T>(y, w);
  return w;
}

// w = softmax((log q + g) / temperature) for categorical probabilities q.
template <typename T>
std::vector<T> gumbel_softmax_sample(std::span<const T> q, double temperature, Rng& rng) {
  if (!(temperature > 0.0)) throw InvalidArgument("gumbel-softmax temperature must be > 0");
  // Zero-probability cells can never be selected; they get weight exactly 0.
  std::vector<double> score(q.size());
  double max_v = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < q.size(); ++c) {
    const double g = standard_gumbel(rng);
    const double qc = static_cast<double>(q[c]);
    score[c] = qc > 0.0 ? (std::log(qc) + g) / temperature : -std::numeric_limits<double>::infinity();
    max_v = std::max(max_v, score[c]);
  }
  std::vector<T> w(q.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < q.size(); ++c) {
    const double e = std::isfinite(score[c]) ? std::exp(score[c] - max_v) : 0.0;
    w[c] = static_cast<T>(e);
    sum += e;
  }
  for (auto& v : w) v = static_cast<T>(static_cast<double>(v) / sum);
  return w;
}

// Noise consumed by one joint posterior draw.
struct LatentNoise {
  std::vector<double> gumbel;
  std::vector<double> eps_z;
  double eps_theta = 0.0;

  static LatentNoise draw(std::size_t cells, int z_dim, Rng& rng) {
    LatentNoise n;
    n.gumbel.resize(cells);
    for (auto& g : n.gumbel) g = standard_gumbel(rng);
    n.eps_z.resize(z_dim);
    for (auto& e : n.eps_z) e = standard_normal(rng);
    n.eps_theta = standard_normal(rng);
    return n;
  }

  // Noise for a deterministic draw at the posterior mean of the selected cell.
  static LatentNoise zeros(std::size_t cells, int z_dim) {
    LatentNoise n;
    n.gumbel.assign(cells, 0.0);
    n.eps_z.assign(z_dim, 0.0);
    return n;
  }
};

// One differentiable draw for a single image.
template <typename T>
struct LatentSample {
  std::vector<T> soft_assign;  // [r, H, W]
  Vec2<T> t = Vec2<T>::Zero();
  T theta = T(0);
  std::vector<T> z;
  // Weighted parameters and noise, kept for the backward pass.
  std::vector<T> mu_z;
  std::vector<T> sigma_z;
  T mu_theta = T(0);
  T sigma_theta = T(0);
  LatentNoise noise;
  double temperature = 1.0;
};

template <typename T>
void require_field_matches(const PosteriorField<T>& field, const CoordinateGrid<T>& grid,
                           const PriorSpec& prior) {
  if (field.height != grid.height || field.width != grid.width)
    throw ShapeError("posterior field and coordinate grid sizes differ");
  if (field.r != prior.r || field.height != prior.height || field.width != prior.width)
    throw ShapeError("posterior field and prior disagree on (r, H, W)");
}

template <typename T>
LatentSample<T> sample_joint(const PosteriorField<T>& field, int b, const CoordinateGrid<T>& grid,
                             const PriorSpec& prior, double temperature, LatentNoise noise) {
  require_field_matches(field, grid, prior);
  const std::size_t n = field.cells();
  const std::size_t plane = field.plane();
  const int zd = field.z_dim;
  if (noise.gumbel.size() != n || static_cast<int>(noise.eps_z.size()) != zd)
    throw ShapeError("latent noise does not match the posterior field");
  LatentSample<T> s;
  s.temperature = temperature;
  s.soft_assign = gumbel_softmax_from_logits<T>(field.logits(b), noise.gumbel, temperature);
  s.mu_z.assign(zd, T(0));
  s.sigma_z.assign(zd, T(0));
  auto mu_z = field.mu_z_of(b);
  auto ls_z = field.log_sigma_z_of(b);
  auto mu_t = field.mu_dtheta_of(b);
  auto ls_t = field.log_sigma_theta_of(b);
  for (std::size_t c = 0; c < n; ++c) {
    const T w = s.soft_assign[c];
    if (w == T(0)) continue;
    const int j = static_cast<int>(c / plane);
    for (int d = 0; d < zd; ++d) {
      s.mu_z[d] += w * mu_z[c * zd + d];
      s.sigma_z[d] += w * std::exp(clamp_log_sigma(ls_z[c * zd + d]));
    }
    s.mu_theta += w * (mu_t[c] + static_cast<T>(prior.theta_offset(j)));
    s.sigma_theta += w * std::exp(clamp_log_sigma(ls_t[c]));
    s.t(0) += w * grid.coords(c % plane, 0);
    s.t(1) += w * grid.coords(c % plane, 1);
  }
  s.z.resize(zd);
  for (int d = 0; d < zd; ++d) s.z[d] = s.mu_z[d] + s.sigma_z[d] * static_cast<T>(noise.eps_z[d]);
  s.theta = s.mu_theta + s.sigma_theta * static_cast<T>(noise.eps_theta);
  s.noise = std::move(noise);
  return s;
}

template <typename T>
LatentSample<T> sample_joint(const PosteriorField<T>& field, int b, const CoordinateGrid<T>& grid,
                             const PriorSpec& prior, double temperature, Rng& rng) {
  return sample_joint(field, b, grid, prior, temperature,
                      LatentNoise::draw(field.cells(), field.z_dim, rng));
}

// Adds d(loss)/d(field) for image b given d(loss)/d(z, theta, t).
template <typename T>
void sample_joint_backward(const PosteriorField<T>& field, int b, const CoordinateGrid<T>& grid,
                           const PriorSpec& prior, const LatentSample<T>& s,
                           std::span<const T> grad_z, T grad_theta, const Vec2<T>& grad_t,
                           PosteriorField<T>& grad) {
  const std::size_t n = field.cells();
  const std::size_t plane = field.plane();
  const int zd = field.z_dim;
  std::vector<T> g_sigma_z(zd);
  for (int d = 0; d < zd; ++d) g_sigma_z[d] = grad_z[d] * static_cast<T>(s.noise.eps_z[d]);
  const T g_mu_theta = grad_theta;
  const T g_sigma_theta = grad_theta * static_cast<T>(s.noise.eps_theta);

  auto mu_z = field.mu_z_of(b);
  auto ls_z = field.log_sigma_z_of(b);
  auto mu_t = field.mu_dtheta_of(b);
  auto ls_t = field.log_sigma_theta_of(b);
  auto g_logits = grad.logits(b);
  auto g_mu_z = grad.mu_z_of(b);
  auto g_ls_z = grad.log_sigma_z_of(b);
  auto g_mu_t = grad.mu_dtheta_of(b);
  auto g_ls_t = grad.log_sigma_theta_of(b);

  std::vector<T> g_w(n);
  T weighted = T(0);
  for (std::size_t c = 0; c < n; ++c) {
    const T w = s.soft_assign[c];
    const int j = static_cast<int>(c / plane);
    const std::size_t p = c % plane;
    const T sig_t = std::exp(clamp_log_sigma(ls_t[c]));
    T gw = g_mu_theta * (mu_t[c] + static_cast<T>(prior.theta_offset(j))) + g_sigma_theta * sig_t +
           grad_t(0) * grid.coords(p, 0) + grad_t(1) * grid.coords(p, 1);
    for (int d = 0; d < zd; ++d) {
      const T sig = std::exp(clamp_log_sigma(ls_z[c * zd + d]));
      gw += grad_z[d] * mu_z[c * zd + d] + g_sigma_z[d] * sig;
      g_mu_z[c * zd + d] += w * grad_z[d];
      g_ls_z[c * zd + d] += w * g_sigma_z[d] * sig * log_sigma_mask(ls_z[c * zd + d]);
    }
    g_mu_t[c] += w * g_mu_theta;
    g_ls_t[c] += w * g_sigma_theta * sig_t * log_sigma_mask(ls_t[c]);
    g_w[c] = gw;
    weighted += w * gw;
  }
  const T inv_tau = static_cast<T>(1.0 / s.temperature);
  for (std::size_t c = 0; c < n; ++c) g_logits[c] += inv_tau * s.soft_assign[c] * (g_w[c] - weighted);
}

// ---------------------------------------------------------------------------

struct KlTerms {
  double kl_tr = 0.0;     // KL between q(t, r | y) and p(t) p(r)
  double kl_theta = 0.0;  // sum over cells of q * KL_theta
  double kl_z = 0.0;      // sum over cells of q * KL_z
  double total() const { return kl_tr + kl_theta + kl_z; }
};

// Gaussian KL( N(mu_q, s_q^2) || N(mu_p, s_p^2) ) in terms of log s_q. Written
// via the log-ratio so identical distributions give exactly zero.
template <typename T>
T gaussian_kl(T mu_q, T log_sigma_q, T mu_p, T sigma_p) {
  const T log_ratio = log_sigma_q - std::log(sigma_p);
  const T diff = (mu_q - mu_p) / sigma_p;
  return -log_ratio + T(0.5) * (std::exp(T(2) * log_ratio) + diff * diff - T(1));
}

// KL of the full posterior for image b against the factorised prior. The
// theta term compares each cell to the prior component of its own rotation,
// N(theta_offset, (pi/r)^2); both means carry the same offset, so only the
// residual mu_dtheta enters.
template <typename T>
KlTerms kl_total(const PosteriorField<T>& field, int b, const PriorSpec& prior) {
  if (field.r != prior.r || field.height != prior.height || field.width != prior.width)
    throw ShapeError("posterior field and prior disagree on (r, H, W)");
  const std::size_t n = field.cells();
  const int zd = field.z_dim;
  std::vector<T> q(n);
  softmax_into<T>(field.logits(b), q);
  auto logits = field.logits(b);
  T max_l = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v - max_l));
  const double lse = static_cast<double>(max_l) + std::log(sum);

  auto mu_z = field.mu_z_of(b);
  auto ls_z = field.log_sigma_z_of(b);
  auto mu_t = field.mu_dtheta_of(b);
  auto ls_t = field.log_sigma_theta_of(b);
  const T sp = static_cast<T>(prior.theta_component_std);
  KlTerms kl;
  for (std::size_t c = 0; c < n; ++c) {
    const double qc = static_cast<double>(q[c]);
    if (qc <= 0.0) continue;
    const double log_q = static_cast<double>(logits[c]) - lse;
    kl.kl_tr += qc * (log_q - prior.log_p_cell(c));
    kl.kl_theta += qc * static_cast<double>(gaussian_kl<T>(mu_t[c], clamp_log_sigma(ls_t[c]), T(0), sp));
    double kz = 0.0;
    for (int d = 0; d < zd; ++d)
      kz += static_cast<double>(gaussian_kl<T>(mu_z[c * zd + d], clamp_log_sigma(ls_z[c * zd + d]), T(0), T(1)));
    kl.kl_z += qc * kz;
  }
  return kl;
}

// Adds scale * d(kl_total)/d(field) for image b into grad.
template <typename T>
void kl_total_backward(const PosteriorField<T>& field, int b, const PriorSpec& prior, T scale,
                       PosteriorField<T>& grad) {
  const std::size_t n = field.cells();
  const int zd = field.z_dim;
  std::vector<T> q(n);
  softmax_into<T>(field.logits(b), q);
  auto logits = field.logits(b);
  T max_l = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v - max_l));
  const double lse = static_cast<double>(max_l) + std::log(sum);

  auto mu_z = field.mu_z_of(b);
  auto ls_z = field.log_sigma_z_of(b);
  auto mu_t = field.mu_dtheta_of(b);
  auto ls_t = field.log_sigma_theta_of(b);
  auto g_logits = grad.logits(b);
  auto g_mu_z = grad.mu_z_of(b);
  auto g_ls_z = grad.log_sigma_z_of(b);
  auto g_mu_t = grad.mu_dtheta_of(b);
  auto g_ls_t = grad.log_sigma_theta_of(b);
  const T sp = static_cast<T>(prior.theta_component_std);
  const T inv_var_p = T(1) / (sp * sp);

  std::vector<double> cell_term(n, 0.0);
  double mean_term = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    const T qc = q[c];
    const T lst = clamp_log_sigma(ls_t[c]);
    double k = static_cast<double>(gaussian_kl<T>(mu_t[c], lst, T(0), sp));
    g_mu_t[c] += scale * qc * mu_t[c] * inv_var_p;
    g_ls_t[c] += scale * qc * (std::exp(T(2) * lst) * inv_var_p - T(1)) * log_sigma_mask(ls_t[c]);
    for (int d = 0; d < zd; ++d) {
      const std::size_t i = c * zd + d;
      const T lsz = clamp_log_sigma(ls_z[i]);
      k += static_cast<double>(gaussian_kl<T>(mu_z[i], lsz, T(0), T(1)));
      g_mu_z[i] += scale * qc * mu_z[i];
      g_ls_z[i] += scale * qc * (std::exp(T(2) * lsz) - T(1)) * log_sigma_mask(ls_z[i]);
    }
    const double log_q = static_cast<double>(logits[c]) - lse;
    cell_term[c] = log_q - prior.log_p_cell(c) + k;
    mean_term += static_cast<double>(qc) * cell_term[c];
  }
  for (std::size_t c = 0; c < n; ++c)
    g_logits[c] += scale * static_cast<T>(static_cast<double>(q[c]) * (cell_term[c] - mean_term));
}

// ---------------------------------------------------------------------------

template <typename T>
struct MapEstimate {
  std::size_t cell = 0;
  int rotation = 0;
  int row = 0;
  int col = 0;
  Vec2<T> t = Vec2<T>::Zero();
  T theta = T(0);
  std::vector<T> z;
  double probability = 0.0;
};

// Most probable (r, row, col) cell; ties resolve to the first cell in
// (r, row, col) scan order.
template <typename T>
MapEstimate<T> map_estimate(const PosteriorField<T>& field, int b, const CoordinateGrid<T>& grid,
                            const PriorSpec& prior) {
  if (field.height != grid.height || field.width != grid.width)
    throw ShapeError("posterior field and coordinate grid sizes differ");
  auto logits = field.logits(b);
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[best]) best = c;
  std::vector<T> q(logits.size());
  softmax_into<T>(logits, q);
  const std::size_t plane = field.plane();
  MapEstimate<T> m;
  m.cell = best;
  m.rotation = static_cast<int>(best / plane);
  m.row = static_cast<int>((best % plane) / field.width);
  m.col = static_cast<int>(best % field.width);
  m.t = grid.coords.row(best % plane).transpose();
  const double offset = (m.rotation < prior.r) ? prior.theta_offset(m.rotation) : 0.0;
  m.theta = field.mu_dtheta_of(b)[best] + static_cast<T>(offset);
  auto mu_z = field.mu_z_of(b);
  m.z.assign(mu_z.begin() + best * field.z_dim, mu_z.begin() + (best + 1) * field.z_dim);
  m.probability = static_cast<double>(q[best]);
  return m;
}

}  // namespace tvae
