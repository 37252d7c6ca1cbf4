#pragma once

// Variational objective, its gradient, and the optimisation loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tvae/errors.hpp"
#include "tvae/generator.hpp"
#include "tvae/image.hpp"
#include "tvae/latent.hpp"
#include "tvae/model.hpp"
#include "tvae/rng.hpp"

namespace tvae {

struct ElboDiagnostics {
  double loss = 0.0;  // negative ELBO
  double recon = 0.0;
  double kl_tr = 0.0;
  double kl_theta = 0.0;
  double kl_z = 0.0;

  double kl() const { return kl_tr + kl_theta + kl_z; }

  ElboDiagnostics& operator+=(const ElboDiagnostics& o) {
    loss += o.loss;
    recon += o.recon;
    kl_tr += o.kl_tr;
    kl_theta += o.kl_theta;
    kl_z += o.kl_z;
    return *this;
  }
  ElboDiagnostics scaled(double s) const { return {loss * s, recon * s, kl_tr * s, kl_theta * s, kl_z * s}; }
};

// Negative ELBO of one image under a fixed noise draw. When grad_scale is
// nonzero, grad_scale * d(loss)/d(params) is accumulated into the model.
template <typename T>
ElboDiagnostics elbo_image(Model<T>& model, std::span<const T> image, double temperature,
                           const LatentNoise& noise, double grad_scale = 0.0) {
  const auto& cfg = model.config();
  const int h = cfg.image_height, w = cfg.image_width;
  typename Encoder<T>::Cache enc_cache;
  const bool want_grad = grad_scale != 0.0;
  MatrixX<T> maps = model.encoder().forward_maps(image, h, w, want_grad ? &enc_cache : nullptr);
  PosteriorField<T> field(1, model.posterior_r(), h, w, cfg.z_dim);
  model.encoder().maps_to_field(maps, field, 0);

  const KlTerms kl = kl_total(field, 0, model.prior());
  LatentSample<T> s = sample_joint(field, 0, model.grid(), model.prior(), temperature, noise);
  typename Generator<T>::Cache gen_cache;
  PixelParams<T> params = model.generator().render(s.z, s.theta, s.t, model.grid(), want_grad ? &gen_cache : nullptr);
  PixelParamsGrad<T> pgrad;
  const double recon = reconstruction_log_prob(params, image, want_grad ? &pgrad : nullptr);

  ElboDiagnostics d;
  d.recon = recon;
  d.kl_tr = kl.kl_tr;
  d.kl_theta = kl.kl_theta;
  d.kl_z = kl.kl_z;
  d.loss = -(recon - kl.total());
  if (!std::isfinite(d.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss: recon=" << recon << " kl_tr=" << kl.kl_tr << " kl_theta=" << kl.kl_theta
        << " kl_z=" << kl.kl_z << " theta=" << s.theta << " t=(" << s.t(0) << "," << s.t(1) << ")";
    throw NumericError(msg.str());
  }
  if (!want_grad) return d;

  const T scale = static_cast<T>(grad_scale);
  pgrad.value *= -scale;
  if (pgrad.log_sigma.size() > 0) pgrad.log_sigma *= -scale;
  auto input_grad = model.generator().backward(params, pgrad.value, pgrad.log_sigma, gen_cache);
  T grad_theta = T(0);
  Vec2<T> grad_t = Vec2<T>::Zero();
  pose_backward(model.grid().coords, s.theta, s.t, input_grad.coords, grad_theta, grad_t);

  PosteriorField<T> fgrad(1, field.r, h, w, cfg.z_dim);
  sample_joint_backward(field, 0, model.grid(), model.prior(), s, std::span<const T>(input_grad.z),
                        grad_theta, grad_t, fgrad);
  kl_total_backward(field, 0, model.prior(), scale, fgrad);
  model.encoder().backward(model.encoder().field_grad_to_maps(fgrad, 0), enc_cache);
  return d;
}

// Batch-mean negative ELBO with one posterior sample per image. Noise is
// drawn from `rng` image by image. With compute_grad, the gradient of the
// batch mean is accumulated into the model (callers zero it first).
template <typename T>
ElboDiagnostics elbo_loss(Model<T>& model, const ImageBatch<T>& batch, double temperature, Rng& rng,
                          bool compute_grad = false) {
  const auto& cfg = model.config();
  if (batch.channels != cfg.in_channels || batch.height != cfg.image_height || batch.width != cfg.image_width)
    throw ShapeError("elbo_loss: batch shape does not match the model");
  if (batch.n < 1) throw InvalidArgument("elbo_loss: empty batch");
  const std::size_t cells = static_cast<std::size_t>(model.posterior_r()) * cfg.image_height * cfg.image_width;
  const double inv_n = 1.0 / batch.n;
  ElboDiagnostics total;
  for (int b = 0; b < batch.n; ++b) {
    const LatentNoise noise = LatentNoise::draw(cells, cfg.z_dim, rng);
    total += elbo_image(model, batch.image(b), temperature, noise, compute_grad ? inv_n : 0.0);
  }
  return total.scaled(inv_n);
}

// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(ParamRefs<T> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.emplace_back(p->count(), 0.0);
      v_.emplace_back(p->count(), 0.0);
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  std::int64_t steps() const { return step_; }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param<T>& p = *params_[k];
      if (!p.trainable) continue;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double update = lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
      }
    }
  }

 private:
  ParamRefs<T> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
};

// Halves the learning rate after `patience` epochs without improvement and
// signals early stopping after `stop_patience` epochs without improvement.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr, double factor = 0.5, int patience = 10, int stop_patience = 20)
      : lr_(lr), factor_(factor), patience_(patience), stop_patience_(stop_patience) {}

  double lr() const { return lr_; }
  int epochs_since_best() const { return since_best_; }
  bool should_stop() const { return since_best_ >= stop_patience_; }

  // Records an epoch loss; returns true when the rate was reduced.
  bool record(double loss) {
    if (loss < best_) {
      best_ = loss;
      bad_ = 0;
      since_best_ = 0;
      return false;
    }
    ++bad_;
    ++since_best_;
    if (bad_ >= patience_) {
      lr_ *= factor_;
      bad_ = 0;
      return true;
    }
    return false;
  }

 private:
  double lr_;
  double factor_;
  int patience_;
  int stop_patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
  int since_best_ = 0;
};

// Gumbel-softmax temperature per epoch. Spec strings:
//   "linear:START:END:FRACTION"  anneal over the first FRACTION of max_epochs
//   "const:VALUE"
struct TemperatureSchedule {
  double start = 1.0;
  double end = 0.1;
  double fraction = 0.5;

  static TemperatureSchedule parse(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    auto num = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw InvalidArgument("bad number '" + s + "' in temperature schedule '" + spec + "'");
      }
    };
    TemperatureSchedule t;
    if (parts.size() == 2 && parts[0] == "const") {
      t.start = t.end = num(parts[1]);
      t.fraction = 1.0;
    } else if (parts.size() == 4 && parts[0] == "linear") {
      t.start = num(parts[1]);
      t.end = num(parts[2]);
      t.fraction = num(parts[3]);
    } else {
      throw InvalidArgument("temperature schedule must be 'linear:START:END:FRACTION' or 'const:VALUE', got '" +
                            spec + "'");
    }
    if (!(t.start > 0.0) || !(t.end > 0.0) || !(t.fraction > 0.0))
      throw InvalidArgument("temperature schedule values must be positive: '" + spec + "'");
    return t;
  }

  std::string to_string() const {
    if (start == end) return "const:" + format_number(start);
    return "linear:" + format_number(start) + ":" + format_number(end) + ":" + format_number(fraction);
  }

  double at(int epoch, int max_epochs) const {
    const double span = fraction * std::max(max_epochs, 1);
    const double a = std::min(1.0, static_cast<double>(epoch) / span);
    return start + (end - start) * a;
  }

 private:
  static std::string format_number(double v) {
    std::ostringstream o;
    o << v;
    return o.str();
  }
};

struct TrainConfig {
  int batch_size = 100;
  double learning_rate = 2e-4;
  double lr_decay_factor = 0.5;
  int lr_patience = 10;
  int early_stop_patience = 20;
  int max_epochs = 500;
  std::uint64_t seed = 0;
  TemperatureSchedule temperature;
  // When > 0, this fraction of the data is held out and its loss drives the
  // schedule instead of the training loss.
  double validation_fraction = 0.0;
  std::string checkpoint_path;  // written after every epoch when non-empty
};

struct TrainLogRow {
  int epoch = 0;
  std::int64_t step = 0;
  ElboDiagnostics train;
  std::optional<double> validation_loss;
  double lr = 0.0;
  double temperature = 0.0;
};

inline const char* kTrainLogHeader = "epoch\tstep\tloss\trecon\tkl_tr\tkl_theta\tkl_z\tlr\ttemperature\tval_loss";

inline std::string format_log_row(const TrainLogRow& r) {
  std::ostringstream o;
  o.precision(10);
  o << r.epoch << '\t' << r.step << '\t' << r.train.loss << '\t' << r.train.recon << '\t' << r.train.kl_tr
    << '\t' << r.train.kl_theta << '\t' << r.train.kl_z << '\t' << r.lr << '\t' << r.temperature << '\t';
  if (r.validation_loss) o << *r.validation_loss;
  else o << "nan";
  return o.str();
}

struct TrainResult {
  std::vector<TrainLogRow> log;
  int epochs_run = 0;
  bool early_stopped = false;
  double final_lr = 0.0;
};

template <typename T>
using CheckpointWriter = std::function<void(Model<T>&, const std::string&)>;

template <typename T>
void validate_train_config(const TrainConfig& cfg) {
  if (cfg.batch_size < 1 || cfg.max_epochs < 1 || cfg.lr_patience < 1 || cfg.early_stop_patience < 1)
    throw InvalidArgument("training counts must be positive");
  if (!(cfg.learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (cfg.validation_fraction < 0.0 || cfg.validation_fraction >= 1.0)
    throw InvalidArgument("validation fraction must be in [0, 1)");
}

// Mini-batch training with Adam, plateau learning-rate decay and early
// stopping. Deterministic for a given seed.
template <typename T>
TrainResult fit(const ImageBatch<T>& dataset, Model<T>& model, const TrainConfig& cfg,
                std::ostream* log_out = nullptr, const CheckpointWriter<T>& save = {}) {
  validate_train_config<T>(cfg);
  if (dataset.n < 1) throw InvalidArgument("fit: dataset is empty");

  std::vector<int> order(dataset.n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> train_idx = order, val_idx;
  if (cfg.validation_fraction > 0.0) {
    Rng split_rng = derive_stream(cfg.seed, 3);
    std::shuffle(order.begin(), order.end(), split_rng);
    const int n_val = std::max(1, static_cast<int>(std::lround(cfg.validation_fraction * dataset.n)));
    if (n_val >= dataset.n) throw InvalidArgument("fit: validation split leaves no training data");
    val_idx.assign(order.begin(), order.begin() + n_val);
    train_idx.assign(order.begin() + n_val, order.end());
  }
  const ImageBatch<T> validation = val_idx.empty() ? ImageBatch<T>() : dataset.select(val_idx);

  Rng shuffle_rng = derive_stream(cfg.seed, 1);
  Rng noise_rng = derive_stream(cfg.seed, 2);
  Adam<T> adam(model.parameters(), cfg.learning_rate);
  PlateauSchedule schedule(cfg.learning_rate, cfg.lr_decay_factor, cfg.lr_patience, cfg.early_stop_patience);
  TrainResult result;
  if (log_out) *log_out << kTrainLogHeader << '\n';

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double tau = cfg.temperature.at(epoch, cfg.max_epochs);
    std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
    ElboDiagnostics epoch_sum;
    int seen = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const int> ids(train_idx.data() + start, stop - start);
      const ImageBatch<T> batch = dataset.select(ids);
      model.zero_grad();
      const ElboDiagnostics d = elbo_loss(model, batch, tau, noise_rng, true);
      adam.step();
      epoch_sum += d.scaled(static_cast<double>(batch.n));
      seen += batch.n;
    }
    TrainLogRow row;
    row.epoch = epoch;
    row.step = adam.steps();
    row.train = epoch_sum.scaled(1.0 / seen);
    row.lr = adam.lr();
    row.temperature = tau;
    double monitored = row.train.loss;
    if (validation.n > 0) {
      Rng val_rng = derive_stream(cfg.seed, 4);
      row.validation_loss = elbo_loss(model, validation, tau, val_rng, false).loss;
      monitored = *row.validation_loss;
    }
    result.log.push_back(row);
    if (log_out) *log_out << format_log_row(row) << '\n' << std::flush;
    if (save && !cfg.checkpoint_path.empty()) save(model, cfg.checkpoint_path);

    schedule.record(monitored);
    adam.set_lr(schedule.lr());
    result.epochs_run = epoch + 1;
    if (schedule.should_stop()) {
      result.early_stopped = true;
      break;
    }
  }
  result.final_lr = adam.lr();
  return result;
}

}  // namespace tvae
