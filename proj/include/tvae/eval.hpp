#pragma once

// Pose, clustering and rotation-consistency metrics, multi-object detection
// and pose-aligned reconstruction.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "tvae/clustering.hpp"
#include "tvae/data/synthesis.hpp"
#include "tvae/kv.hpp"
#include "tvae/latent.hpp"
#include "tvae/model.hpp"
#include "tvae/stats.hpp"

namespace tvae {

struct PosePrediction {
  double theta = 0.0;
  double tx_px = 0.0, ty_px = 0.0;  // pixels from the image centre
  std::vector<double> z;
  int rotation = 0;
  double probability = 0.0;
};

// MAP pose and latent code of one image.
template <typename T>
PosePrediction predict_pose(const Model<T>& model, std::span<const std::type_identity_t<T>> image, int height, int width) {
  const auto& cfg = model.config();
  const MatrixX<T> maps = model.encoder().forward_maps(image, height, width);
  PosteriorField<T> field(1, model.posterior_r(), height, width, cfg.z_dim);
  model.encoder().maps_to_field(maps, field, 0);
  const bool native = height == cfg.image_height && width == cfg.image_width;
  const CoordinateGrid<T> grid = native ? model.grid() : make_coordinate_grid<T>(height, width);
  const PriorSpec prior = native ? model.prior() : model.prior_for(height, width);
  const auto m = map_estimate(field, 0, grid, prior);
  PosePrediction p;
  p.theta = static_cast<double>(m.theta);
  p.tx_px = static_cast<double>(m.t(0)) * (width - 1) / 2.0;
  p.ty_px = static_cast<double>(m.t(1)) * (height - 1) / 2.0;
  p.z.assign(m.z.begin(), m.z.end());
  p.rotation = m.rotation;
  p.probability = m.probability;
  return p;
}

template <typename T>
std::vector<PosePrediction> predict_poses(const Model<T>& model, const ImageBatch<T>& images) {
  std::vector<PosePrediction> out;
  out.reserve(images.n);
  for (int i = 0; i < images.n; ++i) out.push_back(predict_pose(model, images.image(i), images.height, images.width));
  return out;
}

// ---------------------------------------------------------------------------

struct PoseMetrics {
  std::optional<double> pearson_x, pearson_y, circular;
  std::map<int, double> circular_per_class;
  std::vector<std::string> notes;  // reasons for undefined values
};

inline PoseMetrics pose_metrics(const std::vector<PosePrediction>& pred, const data::TransformedDataset& ds) {
  if (static_cast<int>(pred.size()) != ds.size()) throw ShapeError("prediction count differs from dataset size");
  if (ds.gt_t.size() != pred.size() || ds.gt_theta.size() != pred.size())
    throw InvalidArgument("dataset has no pose ground truth");
  std::vector<double> px, py, pt, gx, gy, gt;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    px.push_back(pred[i].tx_px);
    py.push_back(pred[i].ty_px);
    pt.push_back(pred[i].theta);
    gx.push_back(ds.gt_t[i][0]);
    gy.push_back(ds.gt_t[i][1]);
    gt.push_back(ds.gt_theta[i]);
  }
  PoseMetrics m;
  auto attempt = [&](std::optional<double>& dst, const char* name, auto&& f) {
    try {
      dst = f();
    } catch (const DegenerateInput& e) {
      m.notes.push_back(std::string(name) + " undefined: " + e.what());
    }
  };
  attempt(m.pearson_x, "translation_pearson_x", [&] { return pearson(px, gx); });
  attempt(m.pearson_y, "translation_pearson_y", [&] { return pearson(py, gy); });
  attempt(m.circular, "rotation_circular_corr", [&] { return circular_correlation(pt, gt); });
  if (!ds.labels.empty()) {
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_class;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      by_class[ds.labels[i]].first.push_back(pt[i]);
      by_class[ds.labels[i]].second.push_back(gt[i]);
    }
    for (const auto& [label, series] : by_class) {
      try {
        m.circular_per_class[label] = circular_correlation(series.first, series.second);
      } catch (const DegenerateInput& e) {
        m.notes.push_back("rotation_circular_corr class " + std::to_string(label) + " undefined: " + e.what());
      }
    }
  }
  return m;
}

template <typename T>
PoseMetrics eval_pose(const Model<T>& model, const data::TransformedDataset& ds) {
  return pose_metrics(predict_poses(model, ds.images.template cast<T>()), ds);
}

// ---------------------------------------------------------------------------

inline Eigen::MatrixXd embeddings_matrix(const std::vector<PosePrediction>& pred) {
  if (pred.empty()) return {};
  Eigen::MatrixXd z(pred.size(), pred.front().z.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t d = 0; d < pred[i].z.size(); ++d) z(i, d) = pred[i].z[d];
  return z;
}

inline double clustering_accuracy(const Eigen::MatrixXd& z, const std::vector<int>& labels, int k) {
  if (static_cast<std::size_t>(z.rows()) != labels.size()) throw ShapeError("embedding count differs from label count");
  return cluster_accuracy(ward_clustering(z, k), labels);
}

template <typename T>
double eval_clustering(const Model<T>& model, const data::TransformedDataset& ds, int k) {
  if (ds.size() < k) throw InvalidArgument("fewer images than clusters");
  return clustering_accuracy(embeddings_matrix(predict_poses(model, ds.images.template cast<T>())), ds.labels, k);
}

// ---------------------------------------------------------------------------

// Resamples a square single-channel image as out(p) = in(R(alpha) p) about
// the image centre, bilinear with zero fill. An object at pose theta appears
// at pose theta + alpha afterwards.
inline std::vector<float> rotate_image(std::span<const float> img, int size, double alpha) {
  return data::place_transformed(img, size, size, alpha, 0.0, 0.0);
}

using ThetaPredictor = std::function<std::vector<double>(const ImageBatch<float>&)>;

template <typename T>
ThetaPredictor model_theta_predictor(const Model<T>& model) {
  return [&model](const ImageBatch<float>& b) {
    std::vector<double> out;
    for (const auto& p : predict_poses(model, b.template cast<T>())) out.push_back(p.theta);
    return out;
  };
}

struct RotationRmse {
  std::map<int, double> per_class_deg;
  double average_deg = 0.0;  // mean of the per-class values
  double pooled_deg = 0.0;
};

// Angles applied to image i: n draws uniform on [0, 2 pi) from stream (seed, i).
inline std::vector<double> rotation_rmse_angles(std::uint64_t seed, int i, int n) {
  Rng rng = derive_stream(seed, static_cast<std::uint64_t>(i));
  std::vector<double> out(n);
  for (auto& a : out) a = 2.0 * std::numbers::pi * uniform01(rng);
  return out;
}

// For each image, applies n_rotations angles from rotation_rmse_angles and
// scores wrap((pred(alpha) - pred(0)) - alpha). The predictor receives the
// unrotated image first, then the rotated copies in order.
inline RotationRmse eval_rotation_rmse(const ThetaPredictor& predict, const data::TransformedDataset& ds,
                                       int n_rotations = 160, std::uint64_t seed = 0, int max_images = -1) {
  const int n = max_images < 0 ? ds.size() : std::min(ds.size(), max_images);
  const int s = ds.images.height;
  if (ds.images.width != s || ds.images.channels != 1) throw ShapeError("rotation RMSE needs square single-channel images");
  if (n < 1 || n_rotations < 1) throw InvalidArgument("rotation RMSE needs images and rotations");
  std::map<int, std::pair<double, long long>> acc;
  double pooled = 0.0;
  long long pooled_n = 0;
  for (int i = 0; i < n; ++i) {
    ImageBatch<float> batch(n_rotations + 1, 1, s, s);
    std::vector<double> alpha{0.0};
    const auto drawn = rotation_rmse_angles(seed, i, n_rotations);
    alpha.insert(alpha.end(), drawn.begin(), drawn.end());
    const auto src = ds.images.image(i);
    std::copy(src.begin(), src.end(), batch.image(0).begin());
    for (int k = 1; k <= n_rotations; ++k) {
      const auto rot = rotate_image(src, s, alpha[k]);
      std::copy(rot.begin(), rot.end(), batch.image(k).begin());
    }
    const auto theta = predict(batch);
    if (static_cast<int>(theta.size()) != n_rotations + 1) throw ShapeError("predictor returned wrong count");
    const int label = ds.labels.empty() ? -1 : ds.labels[i];
    for (int k = 1; k <= n_rotations; ++k) {
      const double res = wrap_angle((theta[k] - theta[0]) - alpha[k]);
      acc[label].first += res * res;
      acc[label].second += 1;
      pooled += res * res;
      ++pooled_n;
    }
  }
  RotationRmse out;
  const double deg = 180.0 / std::numbers::pi;
  for (const auto& [label, sums] : acc) {
    out.per_class_deg[label] = deg * std::sqrt(sums.first / static_cast<double>(sums.second));
    out.average_deg += out.per_class_deg[label];
  }
  out.average_deg /= static_cast<double>(out.per_class_deg.size());
  out.pooled_deg = deg * std::sqrt(pooled / static_cast<double>(pooled_n));
  return out;
}

// ---------------------------------------------------------------------------

struct DetectOptions {
  double peak_threshold = -1.0;     // on q(t | y); negative means 5x the uniform level
  double min_separation_px = -1.0;  // negative means half the training image width
  int max_objects = 0;              // 0 means no limit
};

template <typename T>
struct Detection {
  double center_x = 0.0, center_y = 0.0;  // canvas pixel coordinates (column, row)
  Vec2<T> t = Vec2<T>::Zero();            // normalized canvas coordinates
  double theta = 0.0;
  std::vector<T> z;
  int rotation = 0;
  double score = 0.0;                     // q(t | y) at the peak
  ImageBatch<T> reconstruction;           // object rendered at its pose, training-size canvas
};

// Objects located as peaks of the translation marginal q(t|y) = sum_r q(t, r|y).
template <typename T>
std::vector<Detection<T>> detect_objects(const Model<T>& model, std::span<const std::type_identity_t<T>> image, int height, int width,
                                         const DetectOptions& opt = {}) {
  const auto& cfg = model.config();
  const MatrixX<T> maps = model.encoder().forward_maps(image, height, width);
  PosteriorField<T> field(1, model.posterior_r(), height, width, cfg.z_dim);
  model.encoder().maps_to_field(maps, field, 0);
  const PriorSpec prior = model.prior_for(height, width);
  const auto q = attention_softmax(field);
  const int plane = height * width;
  std::vector<double> qt(plane, 0.0);
  for (int r = 0; r < field.r; ++r)
    for (int p = 0; p < plane; ++p) qt[p] += static_cast<double>(q[r * plane + p]);

  const double threshold = opt.peak_threshold >= 0.0 ? opt.peak_threshold : 5.0 / plane;
  const double sep = opt.min_separation_px >= 0.0 ? opt.min_separation_px : cfg.image_width / 2.0;
  std::vector<int> peaks;
  for (int row = 0; row < height; ++row)
    for (int col = 0; col < width; ++col) {
      const double v = qt[row * width + col];
      if (!(v > threshold)) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int y = row + dy, x = col + dx;
          if ((dy || dx) && y >= 0 && y < height && x >= 0 && x < width && qt[y * width + x] > v) {
            is_max = false;
            break;
          }
        }
      if (is_max) peaks.push_back(row * width + col);
    }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return qt[a] > qt[b]; });

  const CoordinateGrid<T> grid = make_coordinate_grid<T>(height, width);
  std::vector<Detection<T>> out;
  for (int p : peaks) {
    const double cx = p % width, cy = p / width;
    const bool suppressed = std::any_of(out.begin(), out.end(), [&](const auto& d) {
      return std::hypot(d.center_x - cx, d.center_y - cy) < sep;
    });
    if (suppressed) continue;
    Detection<T> d;
    d.center_x = cx;
    d.center_y = cy;
    d.t = grid.coords.row(p).transpose();
    d.score = qt[p];
    int best_r = 0;
    for (int r = 1; r < field.r; ++r)
      if (q[r * plane + p] > q[best_r * plane + p]) best_r = r;
    const std::size_t cell = static_cast<std::size_t>(best_r) * plane + p;
    d.rotation = best_r;
    d.theta = static_cast<double>(field.mu_dtheta[cell]) + prior.theta_offset(best_r);
    d.z.assign(field.mu_z.begin() + cell * cfg.z_dim, field.mu_z.begin() + (cell + 1) * cfg.z_dim);
    const auto params = model.generator().render(d.z, static_cast<T>(d.theta), Vec2<T>::Zero(), model.grid());
    d.reconstruction = ImageBatch<T>(1, params.channels(), cfg.image_height, cfg.image_width);
    for (Eigen::Index c = 0; c < params.channels(); ++c)
      for (Eigen::Index i = 0; i < params.pixels(); ++i) d.reconstruction.pixels[c * params.pixels() + i] = params.value(i, c);
    out.push_back(std::move(d));
    if (opt.max_objects > 0 && static_cast<int>(out.size()) >= opt.max_objects) break;
  }
  return out;
}

struct DetectionScore {
  int true_positives = 0, false_positives = 0, ground_truth = 0, images = 0;
  double mean_error_px = 0.0;  // over matched pairs
  double max_error_px = 0.0;

  double recall() const { return ground_truth ? static_cast<double>(true_positives) / ground_truth : 0.0; }
  double false_positives_per_image() const { return images ? static_cast<double>(false_positives) / images : 0.0; }
};

// Greedy closest-pair matching of predicted to true centres within `radius` px.
inline DetectionScore score_detections(const std::vector<std::vector<std::array<double, 2>>>& predicted,
                                       const std::vector<std::vector<std::array<double, 2>>>& truth, double radius) {
  if (predicted.size() != truth.size()) throw ShapeError("detection and ground-truth image counts differ");
  DetectionScore s;
  double err_sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++s.images;
    s.ground_truth += static_cast<int>(truth[i].size());
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < predicted[i].size(); ++a)
      for (std::size_t b = 0; b < truth[i].size(); ++b) {
        const double d = std::hypot(predicted[i][a][0] - truth[i][b][0], predicted[i][a][1] - truth[i][b][1]);
        if (d <= radius) pairs.emplace_back(d, a, b);
      }
    std::sort(pairs.begin(), pairs.end());
    std::vector<char> used_p(predicted[i].size()), used_t(truth[i].size());
    int matched = 0;
    for (const auto& [d, a, b] : pairs) {
      if (used_p[a] || used_t[b]) continue;
      used_p[a] = used_t[b] = 1;
      ++matched;
      err_sum += d;
      s.max_error_px = std::max(s.max_error_px, d);
    }
    s.true_positives += matched;
    s.false_positives += static_cast<int>(predicted[i].size()) - matched;
  }
  if (s.true_positives) s.mean_error_px = err_sum / s.true_positives;
  return s;
}

// size x size window of a single-channel image centred on (cx, cy), zero outside.
template <typename T>
std::vector<T> crop_centered(std::span<const std::type_identity_t<T>> image, int height, int width, double cx, double cy, int size) {
  std::vector<T> out(static_cast<std::size_t>(size) * size, T(0));
  const int x0 = static_cast<int>(std::lround(cx - (size - 1) / 2.0));
  const int y0 = static_cast<int>(std::lround(cy - (size - 1) / 2.0));
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int sy = y0 + y, sx = x0 + x;
      if (sy >= 0 && sy < height && sx >= 0 && sx < width) out[y * size + x] = image[sy * width + sx];
    }
  return out;
}

// ---------------------------------------------------------------------------

// Renders each image's MAP latent code at theta = 0, t = 0.
template <typename T>
ImageBatch<T> reconstruct_aligned(const Model<T>& model, const ImageBatch<T>& images) {
  const auto& cfg = model.config();
  ImageBatch<T> out(images.n, cfg.generator.channels(), cfg.image_height, cfg.image_width);
  for (int i = 0; i < images.n; ++i) {
    const auto pose = predict_pose(model, images.image(i), images.height, images.width);
    std::vector<T> z(pose.z.begin(), pose.z.end());
    const auto params = model.generator().render(z, T(0), Vec2<T>::Zero(), model.grid());
    auto dst = out.image(i);
    for (Eigen::Index c = 0; c < params.channels(); ++c)
      for (Eigen::Index p = 0; p < params.pixels(); ++p) dst[c * params.pixels() + p] = params.value(p, c);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct MetricsReport {
  std::optional<double> translation_pearson_x, translation_pearson_y;
  std::optional<double> rotation_circular_corr;
  std::map<int, double> rotation_circular_corr_per_class;
  std::optional<double> clustering_accuracy;
  std::map<int, double> rotation_rmse_per_class;
  std::optional<double> rotation_rmse_average;
  KeyValues manifest;
  std::vector<std::string> notes;

  void validate() const {
    auto corr = [](const std::optional<double>& v, const char* name) {
      if (v && !(*v >= -1.0 - 1e-12 && *v <= 1.0 + 1e-12))
        throw NumericError(std::string(name) + " outside [-1, 1]");
    };
    corr(translation_pearson_x, "translation_pearson_x");
    corr(translation_pearson_y, "translation_pearson_y");
    corr(rotation_circular_corr, "rotation_circular_corr");
    if (clustering_accuracy && !(*clustering_accuracy >= 0.0 && *clustering_accuracy <= 100.0))
      throw NumericError("clustering_accuracy outside [0, 100]");
    for (const auto& [k, v] : rotation_rmse_per_class)
      if (!(v >= 0.0)) throw NumericError("negative rotation RMSE");
  }

  // Flat key/value rows; undefined metrics are written as "undefined".
  std::vector<std::pair<std::string, std::string>> rows() const {
    std::vector<std::pair<std::string, std::string>> r;
    auto opt = [&](const std::string& k, const std::optional<double>& v) {
      r.emplace_back(k, v ? format_double(*v) : "undefined");
    };
    opt("translation_pearson_x", translation_pearson_x);
    opt("translation_pearson_y", translation_pearson_y);
    opt("rotation_circular_corr", rotation_circular_corr);
    for (const auto& [c, v] : rotation_circular_corr_per_class)
      r.emplace_back("rotation_circular_corr.class" + std::to_string(c), format_double(v));
    opt("clustering_accuracy", clustering_accuracy);
    opt("rotation_rmse_average_deg", rotation_rmse_average);
    for (const auto& [c, v] : rotation_rmse_per_class)
      r.emplace_back("rotation_rmse_deg.class" + std::to_string(c), format_double(v));
    for (const auto& [k, v] : manifest) r.emplace_back("manifest." + k, v);
    for (std::size_t i = 0; i < notes.size(); ++i) r.emplace_back("note" + std::to_string(i), notes[i]);
    return r;
  }

  // Writes metrics.txt (key=value) and metrics.tsv (metric<TAB>value).
  void write(const std::string& dir) const {
    validate();
    std::filesystem::create_directories(dir);
    KeyValues kv;
    std::ostringstream tsv;
    tsv << "metric\tvalue\n";
    for (const auto& [k, v] : rows()) {
      kv[k] = v;
      tsv << k << '\t' << v << '\n';
    }
    write_key_values(dir + "/metrics.txt", kv);
    std::ofstream(dir + "/metrics.tsv", std::ios::binary) << tsv.str();
  }
};

}  // namespace tvae
