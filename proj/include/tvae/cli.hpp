#pragma once

// Command-line driver: make-dataset, train, eval, detect, reconstruct, embed.
//
// Settings resolve as defaults < config file (--config) < flags. Every key is
// checked against the schema before any work starts, and the resolved
// settings are written to <out>/resolved_config.txt.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "tvae/checkpoint.hpp"
#include "tvae/data/synthesis.hpp"
#include "tvae/eval.hpp"
#include "tvae/png.hpp"
#include "tvae/training.hpp"

namespace tvae::cli {

enum class KeyType { Int, Real, Bool, String, Choice };

struct KeySpec {
  KeyType type = KeyType::String;
  std::string default_value;
  std::vector<std::string> choices;
  double min = -std::numeric_limits<double>::infinity();
};

inline const std::map<std::string, KeySpec>& schema() {
  static const std::map<std::string, KeySpec> s = [] {
    using K = KeyType;
    std::map<std::string, KeySpec> m;
    auto add = [&](const std::string& key, K type, std::string def, double min = -std::numeric_limits<double>::infinity(),
                   std::vector<std::string> choices = {}) { m[key] = KeySpec{type, std::move(def), std::move(choices), min}; };
    const auto inf = -std::numeric_limits<double>::infinity();

    add("seed", K::Int, "0", 0);
    add("device", K::Choice, "cpu", inf, {"cpu"});
    add("output.dir", K::String, "");
    add("checkpoint", K::String, "");

    // Model; model.image_height/width follow the training data when unset.
    const ModelConfig mc;
    for (const auto& [k, v] : model_config_to_kv(mc)) add(k, K::String, v);
    m["model.variant"] = KeySpec{K::Choice, "FULL_P4", {"V1", "V2", "V3", "FULL_P4", "FULL_P8", "FULL_P16"}};
    for (const char* k : {"model.r", "model.z_dim", "model.in_channels", "model.image_height", "model.image_width",
                          "model.kernel_size", "model.channels", "model.generator.n_layers",
                          "model.generator.hidden_units", "model.generator.n_freq"})
      m[k].type = K::Int, m[k].min = 1;
    m["model.n_pointwise_layers"].type = K::Int;
    m["model.n_pointwise_layers"].min = 0;
    m["model.seed"].type = K::Int;
    m["model.seed"].min = 0;
    for (const char* k : {"model.generator.fourier_scale", "model.theta_prior_std", "model.translation_std_px"})
      m[k].type = K::Real, m[k].min = 0;
    m["model.generator.per_pixel_sigma"].type = K::Bool;
    m["model.generator.output_mode"] = KeySpec{K::Choice, m["model.generator.output_mode"].default_value,
                                               {"bernoulli", "gaussian", "rgb"}};
    m["model.theta_prior"] = KeySpec{K::Choice, to_string(mc.theta_prior), {"uniform", "normal"}};

    const TrainConfig tc;
    add("train.batch_size", K::Int, std::to_string(tc.batch_size), 1);
    add("train.learning_rate", K::Real, format_double(tc.learning_rate), 0);
    add("train.lr_decay_factor", K::Real, format_double(tc.lr_decay_factor), 0);
    add("train.lr_patience", K::Int, std::to_string(tc.lr_patience), 1);
    add("train.early_stop_patience", K::Int, std::to_string(tc.early_stop_patience), 1);
    add("train.epochs", K::Int, std::to_string(tc.max_epochs), 1);
    add("train.temperature_schedule", K::String, tc.temperature.to_string());
    add("train.validation_fraction", K::Real, "0", 0);
    add("train.max_images", K::Int, "0", 0);

    add("data.kind", K::Choice, "mnist-u", inf, {"mnist-u", "mnist-n", "multi", "shapes"});
    add("data.source", K::String, "glyphs");
    add("data.source_format", K::Choice, "idx", inf, {"idx", "stack"});
    add("data.source_labels", K::String, "");
    add("data.source_count", K::Int, "60000", 1);
    add("data.downsample", K::Int, "1", 1);
    add("data.normalize", K::Choice, "minmax", inf, {"none", "minmax", "binarize"});
    add("data.count", K::Int, "10000", 1);
    add("data.canvas", K::Int, "50", 1);
    add("data.rotation_std", K::Real, format_double(std::numbers::pi / 4), 0);
    add("data.translation_std_px", K::Real, "5", 0);
    add("data.round_translation", K::Bool, "true");
    add("data.multi.canvas", K::Int, "150", 1);
    add("data.multi.objects", K::Int, "3", 1);
    add("data.multi.non_overlapping", K::Bool, "true");
    add("data.shapes.canvas", K::Int, "64", 1);
    add("data.shapes.translation_steps", K::Int, "8", 1);
    add("data.shapes.translation_range_px", K::Real, "16", 0);
    add("data.train", K::String, "");
    add("data.eval", K::String, "");

    add("eval.max_images", K::Int, "0", 0);
    add("eval.clusters", K::Int, "0", 0);
    add("eval.rmse_images", K::Int, "500", 0);
    add("eval.rmse_rotations", K::Int, "160", 1);

    add("detect.peak_threshold", K::Real, "-1");
    add("detect.min_separation_px", K::Real, "-1");
    add("detect.max_objects", K::Int, "0", 0);
    add("detect.match_radius_px", K::Real, "3", 0);
    add("detect.max_images", K::Int, "0", 0);

    add("reconstruct.count", K::Int, "64", 1);
    return m;
  }();
  return s;
}

inline void validate_value(const std::string& key, const std::string& value) {
  const auto it = schema().find(key);
  if (it == schema().end()) throw InvalidArgument("unknown config key '" + key + "'");
  const KeySpec& spec = it->second;
  switch (spec.type) {
    case KeyType::Int: {
      const double v = static_cast<double>(detail::parse_int(key, value));
      if (v < spec.min) throw InvalidArgument("key '" + key + "': must be >= " + format_double(spec.min));
      break;
    }
    case KeyType::Real: {
      const double v = detail::parse_real(key, value);
      if (!std::isfinite(v) || v < spec.min)
        throw InvalidArgument("key '" + key + "': must be finite and >= " + format_double(spec.min));
      break;
    }
    case KeyType::Bool: detail::parse_bool(key, value); break;
    case KeyType::Choice:
      if (std::find(spec.choices.begin(), spec.choices.end(), value) == spec.choices.end()) {
        std::string list;
        for (const auto& c : spec.choices) list += (list.empty() ? "" : ", ") + c;
        throw InvalidArgument("key '" + key + "': '" + value + "' is not one of {" + list + "}");
      }
      break;
    case KeyType::String: break;
  }
}

struct ExperimentConfig {
  KeyValues values;
  std::set<std::string> explicit_keys;  // set by file or flag

  const std::string& get(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) throw InvalidArgument("unknown config key '" + key + "'");
    return it->second;
  }
  long long get_int(const std::string& key) const { return detail::parse_int(key, get(key)); }
  double get_real(const std::string& key) const { return detail::parse_real(key, get(key)); }
  bool get_bool(const std::string& key) const { return detail::parse_bool(key, get(key)); }
  bool is_set(const std::string& key) const { return explicit_keys.count(key) > 0; }

  void set(const std::string& key, const std::string& value) {
    validate_value(key, value);
    values[key] = value;
    explicit_keys.insert(key);
  }

  static ExperimentConfig defaults() {
    ExperimentConfig c;
    for (const auto& [k, spec] : schema()) c.values[k] = spec.default_value;
    return c;
  }

  ModelConfig model(int height, int width) const {
    KeyValues kv;
    for (const auto& [k, v] : values)
      if (k.rfind("model.", 0) == 0) kv[k] = v;
    if (!is_set("model.seed")) kv["model.seed"] = get("seed");
    if (!is_set("model.image_height")) kv["model.image_height"] = std::to_string(height);
    if (!is_set("model.image_width")) kv["model.image_width"] = std::to_string(width);
    return model_config_from_kv(kv);
  }

  TrainConfig train() const {
    TrainConfig t;
    t.batch_size = static_cast<int>(get_int("train.batch_size"));
    t.learning_rate = get_real("train.learning_rate");
    t.lr_decay_factor = get_real("train.lr_decay_factor");
    t.lr_patience = static_cast<int>(get_int("train.lr_patience"));
    t.early_stop_patience = static_cast<int>(get_int("train.early_stop_patience"));
    t.max_epochs = static_cast<int>(get_int("train.epochs"));
    t.seed = static_cast<std::uint64_t>(get_int("seed"));
    t.temperature = TemperatureSchedule::parse(get("train.temperature_schedule"));
    t.validation_fraction = get_real("train.validation_fraction");
    return t;
  }
};

// Flag values collected by the parser; empty optionals are "not given".
struct Flags {
  std::string config;
  std::optional<long long> seed, z_dim, epochs;
  std::optional<std::string> group, variant, out, device, temperature_schedule, data, checkpoint;
  std::vector<std::string> overrides;  // KEY=VALUE
};

inline std::string default_output_dir(const std::string& command) {
  const char* root = std::getenv("TVAE_OUTPUT_ROOT");
  return (std::filesystem::path(root && *root ? root : "runs") / command).string();
}

inline ExperimentConfig resolve(const std::string& command, const Flags& f) {
  ExperimentConfig c = ExperimentConfig::defaults();
  if (!f.config.empty()) {
    for (const auto& [k, v] : read_key_values(f.config)) {
      try {
        c.set(k, v);
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(f.config + ": " + e.what());
      }
    }
  }
  for (const auto& o : f.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects KEY=VALUE, got '" + o + "'");
    c.set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  if (f.seed) c.set("seed", std::to_string(*f.seed));
  if (f.z_dim) c.set("model.z_dim", std::to_string(*f.z_dim));
  if (f.epochs) c.set("train.epochs", std::to_string(*f.epochs));
  if (f.device) c.set("device", *f.device);
  if (f.temperature_schedule) {
    TemperatureSchedule::parse(*f.temperature_schedule);
    c.set("train.temperature_schedule", *f.temperature_schedule);
  }
  if (f.checkpoint) c.set("checkpoint", *f.checkpoint);
  if (f.data) c.set(command == "train" ? "data.train" : "data.eval", *f.data);
  if (f.variant) {
    if (command == "make-dataset") {
      c.set("data.kind", *f.variant);
    } else if (*f.variant == "FULL") {
      c.set("model.variant", "FULL_P" + (f.group ? f.group->substr(1) : std::string("4")));
    } else {
      c.set("model.variant", to_string(variant_from_string(*f.variant)));
    }
  }
  if (f.group) {
    const std::string r = f.group->substr(1);
    const VariantId v = variant_from_string(c.get("model.variant"));
    if (v == VariantId::FULL_P4 || v == VariantId::FULL_P8 || v == VariantId::FULL_P16)
      c.set("model.variant", "FULL_P" + r);
    else
      c.set("model.r", r);
  }
  if (f.out) c.set("output.dir", *f.out);
  if (c.get("output.dir").empty()) c.values["output.dir"] = default_output_dir(command);
  TemperatureSchedule::parse(c.get("train.temperature_schedule"));
  return c;
}

inline void write_resolved(const ExperimentConfig& c, const std::string& command) {
  KeyValues kv = c.values;
  kv["command"] = command;
  write_key_values(c.get("output.dir") + "/resolved_config.txt", kv);
}

// ---------------------------------------------------------------------------

inline data::DigitSource load_source(const ExperimentConfig& c) {
  const int count = static_cast<int>(c.get_int("data.source_count"));
  const std::string src = c.get("data.source");
  if (src == "glyphs") return data::glyph_digits(count, static_cast<std::uint64_t>(c.get_int("seed")));
  const auto fmt = data::format_from_string(c.get("data.source_format"));
  data::IngestOptions opt;
  opt.downsample_factor = static_cast<int>(c.get_int("data.downsample"));
  opt.normalize = data::normalize_from_string(c.get("data.normalize"));
  auto images = data::ingest<float>(src, fmt, opt);
  std::vector<int> labels = c.get("data.source_labels").empty() ? std::vector<int>(images.n, -1)
                                                                 : data::read_labels(c.get("data.source_labels"), fmt);
  if (static_cast<int>(labels.size()) != images.n)
    throw ShapeError("label file has " + std::to_string(labels.size()) + " entries for " + std::to_string(images.n) +
                     " images");
  if (images.n > count) {
    std::vector<int> head(count);
    std::iota(head.begin(), head.end(), 0);
    images = images.select(head);
    labels.resize(count);
  }
  return {std::move(images), std::move(labels)};
}

inline data::TransformSpec transform_spec(const ExperimentConfig& c, data::RotationDist rot) {
  data::TransformSpec s;
  s.rotation = rot;
  s.rotation_std = c.get_real("data.rotation_std");
  s.translation_std_px = c.get_real("data.translation_std_px");
  s.canvas = static_cast<int>(c.get_int("data.canvas"));
  s.round_translation = c.get_bool("data.round_translation");
  return s;
}

inline int cmd_make_dataset(const ExperimentConfig& c, std::ostream& out) {
  const std::string dir = c.get("output.dir");
  const std::string kind = c.get("data.kind");
  const auto seed = static_cast<std::uint64_t>(c.get_int("seed"));
  const int count = static_cast<int>(c.get_int("data.count"));
  std::filesystem::create_directories(dir);
  if (kind == "shapes") {
    data::ShapesSpec s;
    s.canvas = static_cast<int>(c.get_int("data.shapes.canvas"));
    s.translation_steps = static_cast<int>(c.get_int("data.shapes.translation_steps"));
    s.translation_range_px = c.get_real("data.shapes.translation_range_px");
    auto ds = data::synthesize_shapes(s);
    data::save_dataset(dir, ds);
    out << "wrote " << ds.size() << " shape images to " << dir << '\n';
  } else {
    const auto source = load_source(c);
    const auto rot = kind == "mnist-n" ? data::RotationDist::Normal : data::RotationDist::Uniform;
    if (kind == "multi") {
      // Single transformed digits first, then composited.
      auto singles = data::synthesize_transformed_mnist(source, transform_spec(c, rot), count, seed);
      data::MultiObjectSpec ms;
      ms.canvas = static_cast<int>(c.get_int("data.multi.canvas"));
      ms.count = static_cast<int>(c.get_int("data.multi.objects"));
      ms.n_images = count;
      ms.non_overlapping = c.get_bool("data.multi.non_overlapping");
      auto m = data::synthesize_multi_object(singles, ms, derive_stream(seed, 1)());
      m.manifest["source"] = c.get("data.source");
      data::save_multi_object(dir, m);
      out << "wrote " << count << " multi-object images to " << dir << '\n';
    } else {
      auto ds = data::synthesize_transformed_mnist(source, transform_spec(c, rot), count, seed);
      ds.manifest["source"] = c.get("data.source");
      data::save_dataset(dir, ds);
      out << "wrote " << ds.size() << " images to " << dir << " (" << ds.manifest.at("resampled_poses")
          << " poses redrawn)\n";
    }
  }
  write_resolved(c, "make-dataset");
  return 0;
}

inline std::string require(const ExperimentConfig& c, const std::string& key, const std::string& flag) {
  const std::string v = c.get(key);
  if (v.empty()) throw InvalidArgument("missing " + flag + " (config key '" + key + "')");
  return v;
}

inline data::TransformedDataset limit(data::TransformedDataset ds, long long max_images) {
  if (max_images <= 0 || max_images >= ds.size()) return ds;
  const int n = static_cast<int>(max_images);
  std::vector<int> head(n);
  std::iota(head.begin(), head.end(), 0);
  ds.images = ds.images.select(head);
  auto cut = [n](auto& v) {
    if (static_cast<int>(v.size()) > n) v.resize(n);
  };
  cut(ds.gt_theta);
  cut(ds.gt_t);
  cut(ds.gt_t_raw);
  cut(ds.labels);
  cut(ds.gt_scale);
  return ds;
}

inline int cmd_train(const ExperimentConfig& c, std::ostream& out) {
  const std::string dir = c.get("output.dir");
  const auto ds = limit(data::load_dataset(require(c, "data.train", "--data")), c.get_int("train.max_images"));
  Model<float> model(c.model(ds.images.height, ds.images.width));
  if (model.config().image_height != ds.images.height || model.config().image_width != ds.images.width)
    throw ShapeError("model image size differs from the training images");
  const TrainConfig tc = c.train();
  std::filesystem::create_directories(dir);
  write_resolved(c, "train");
  const std::string ckpt = dir + "/checkpoint.tvae";
  auto meta = [&](int epoch) {
    KeyValues kv{{"train.dataset", c.get("data.train")}, {"train.seed", c.get("seed")}};
    if (epoch >= 0) kv["train.epochs_completed"] = std::to_string(epoch);
    return kv;
  };
  int epoch_counter = 0;
  TrainConfig tc_ckpt = tc;
  tc_ckpt.checkpoint_path = ckpt;
  std::ofstream log(dir + "/train_log.tsv", std::ios::binary);
  const auto res = fit(ds.images, model, tc_ckpt, &log, CheckpointWriter<float>([&](Model<float>& m, const std::string& p) {
                         save_checkpoint(p, m, meta(++epoch_counter));
                       }));
  save_checkpoint(ckpt, model, meta(res.epochs_run));
  const auto& last = res.log.back();
  out << "trained " << res.epochs_run << " epochs" << (res.early_stopped ? " (early stop)" : "") << ", final loss "
      << last.train.loss << "; checkpoint " << ckpt << '\n';
  return 0;
}

inline LoadedCheckpoint<float> open_checkpoint(const ExperimentConfig& c) {
  return load_checkpoint<float>(require(c, "checkpoint", "--checkpoint"));
}

inline int cmd_eval(const ExperimentConfig& c, std::ostream& out) {
  const std::string dir = c.get("output.dir");
  const auto ck = open_checkpoint(c);
  const auto ds = limit(data::load_dataset(require(c, "data.eval", "--data")), c.get_int("eval.max_images"));
  std::filesystem::create_directories(dir);
  write_resolved(c, "eval");
  const auto pred = predict_poses(ck.model, ds.images);

  MetricsReport r;
  r.manifest["checkpoint"] = c.get("checkpoint");
  r.manifest["dataset"] = c.get("data.eval");
  r.manifest["model.variant"] = to_string(ck.model.config().variant);
  for (const char* k : {"kind", "seed"})
    if (auto it = ds.manifest.find(k); it != ds.manifest.end()) r.manifest[std::string("dataset.") + k] = it->second;
  r.manifest["images"] = std::to_string(ds.size());

  if (ds.gt_theta.size() == pred.size()) {
    const auto pm = pose_metrics(pred, ds);
    r.translation_pearson_x = pm.pearson_x;
    r.translation_pearson_y = pm.pearson_y;
    r.rotation_circular_corr = pm.circular;
    r.rotation_circular_corr_per_class = pm.circular_per_class;
    r.notes = pm.notes;
  }
  std::set<int> classes(ds.labels.begin(), ds.labels.end());
  classes.erase(-1);
  const int k = c.get_int("eval.clusters") > 0 ? static_cast<int>(c.get_int("eval.clusters"))
                                               : static_cast<int>(classes.size());
  if (k >= 2 && ds.size() >= k && classes.size() >= 2) {
    r.clustering_accuracy = clustering_accuracy(embeddings_matrix(pred), ds.labels, k);
  } else {
    r.notes.push_back("clustering_accuracy undefined: needs labels with at least 2 classes and N >= k");
  }
  const int rmse_images = static_cast<int>(c.get_int("eval.rmse_images"));
  if (rmse_images > 0 && ds.images.channels == 1 && ds.images.height == ds.images.width) {
    const auto rm = eval_rotation_rmse(model_theta_predictor(ck.model), ds,
                                       static_cast<int>(c.get_int("eval.rmse_rotations")),
                                       static_cast<std::uint64_t>(c.get_int("seed")), rmse_images);
    r.rotation_rmse_per_class = rm.per_class_deg;
    r.rotation_rmse_average = rm.average_deg;
  }
  r.write(dir);
  for (const auto& [key, v] : r.rows())
    if (key.rfind("manifest.", 0) != 0 && key.find(".class") == std::string::npos) out << key << " = " << v << '\n';
  return 0;
}

inline int cmd_detect(const ExperimentConfig& c, std::ostream& out) {
  const std::string dir = c.get("output.dir");
  const auto ck = open_checkpoint(c);
  const std::string data_dir = require(c, "data.eval", "--data");
  const bool multi = std::filesystem::exists(data_dir + "/objects.tsv");
  data::MultiObjectDataset m;
  if (multi) {
    m = data::load_multi_object(data_dir);
  } else {
    auto ds = data::load_dataset(data_dir);
    m.images = ds.images;
    m.objects.resize(ds.size());
    const double cc = (ds.images.width - 1) / 2.0, cr = (ds.images.height - 1) / 2.0;
    for (int i = 0; i < ds.size() && ds.gt_t.size() == static_cast<std::size_t>(ds.size()); ++i)
      m.objects[i].push_back({i, ds.labels[i], ds.gt_theta[i], cc + ds.gt_t[i][0], cr + ds.gt_t[i][1]});
  }
  const long long max_images = c.get_int("detect.max_images");
  const int n = max_images > 0 ? std::min<int>(m.images.n, static_cast<int>(max_images)) : m.images.n;
  DetectOptions opt;
  opt.peak_threshold = c.get_real("detect.peak_threshold");
  opt.min_separation_px = c.get_real("detect.min_separation_px");
  opt.max_objects = static_cast<int>(c.get_int("detect.max_objects"));
  std::filesystem::create_directories(dir);
  write_resolved(c, "detect");

  const auto& mc = ck.model.config();
  std::ostringstream table;
  table << "image\tobject\tcenter_x\tcenter_y\ttheta\tscore\trotation";
  for (int d = 0; d < mc.z_dim; ++d) table << "\tz" << d;
  table << '\n';
  std::vector<std::vector<std::array<double, 2>>> predicted(n), truth(n);
  std::vector<std::vector<float>> crops, recons;
  for (int i = 0; i < n; ++i) {
    const auto img = m.images.image(i);
    const auto dets = detect_objects(ck.model, img, m.images.height, m.images.width, opt);
    for (std::size_t k = 0; k < dets.size(); ++k) {
      const auto& d = dets[k];
      table << i << '\t' << k << '\t' << d.center_x << '\t' << d.center_y << '\t' << format_double(d.theta) << '\t'
            << format_double(d.score) << '\t' << d.rotation;
      for (float z : d.z) table << '\t' << format_double(z);
      table << '\n';
      predicted[i].push_back({d.center_x, d.center_y});
      crops.push_back(crop_centered<float>(img, m.images.height, m.images.width, d.center_x, d.center_y, mc.image_width));
      recons.emplace_back(d.reconstruction.pixels.begin(),
                          d.reconstruction.pixels.begin() + static_cast<std::ptrdiff_t>(d.reconstruction.plane_size()));
    }
    for (const auto& o : m.objects[i]) truth[i].push_back({o.center_x, o.center_y});
  }
  const std::string t = table.str();
  write_file_bytes_atomic(dir + "/detections.tsv", std::vector<std::uint8_t>(t.begin(), t.end()));
  if (!crops.empty()) {
    auto pack = [&](const std::vector<std::vector<float>>& v, int h, int w) {
      ImageBatch<float> b(static_cast<int>(v.size()), 1, h, w);
      for (std::size_t k = 0; k < v.size(); ++k) std::copy(v[k].begin(), v[k].end(), b.image(static_cast<int>(k)).begin());
      return b;
    };
    const auto cb = pack(crops, mc.image_width, mc.image_width);
    data::write_stack(dir + "/crops.tvst", data::to_ndarray(cb));
    write_png_grid(dir + "/crops.png", cb);
    write_png_grid(dir + "/reconstructions.png", pack(recons, mc.image_height, mc.image_width));
  }
  KeyValues summary{{"images", std::to_string(n)}};
  std::size_t total = 0;
  for (const auto& p : predicted) total += p.size();
  summary["detections"] = std::to_string(total);
  const bool have_truth = std::any_of(truth.begin(), truth.end(), [](const auto& v) { return !v.empty(); });
  if (have_truth) {
    const auto s = score_detections(predicted, truth, c.get_real("detect.match_radius_px"));
    summary["recall"] = format_double(s.recall());
    summary["false_positives_per_image"] = format_double(s.false_positives_per_image());
    summary["mean_localization_error_px"] = format_double(s.mean_error_px);
    summary["max_localization_error_px"] = format_double(s.max_error_px);
    summary["match_radius_px"] = c.get("detect.match_radius_px");
  }
  write_key_values(dir + "/detect_summary.txt", summary);
  for (const auto& [k, v] : summary) out << k << " = " << v << '\n';
  return 0;
}

inline int cmd_reconstruct(const ExperimentConfig& c, std::ostream& out) {
  const std::string dir = c.get("output.dir");
  const auto ck = open_checkpoint(c);
  const auto ds = limit(data::load_dataset(require(c, "data.eval", "--data")), c.get_int("reconstruct.count"));
  std::filesystem::create_directories(dir);
  write_resolved(c, "reconstruct");
  const auto aligned = reconstruct_aligned(ck.model, ds.images);
  write_png_grid(dir + "/inputs.png", ds.images);
  write_png_grid(dir + "/aligned.png", aligned);
  data::write_stack(dir + "/aligned.tvst", data::to_ndarray(aligned));
  out << "wrote " << aligned.n << " aligned reconstructions to " << dir << '\n';
  return 0;
}

inline int cmd_embed(const ExperimentConfig& c, std::ostream& out) {
  const std::string dir = c.get("output.dir");
  const auto ck = open_checkpoint(c);
  const auto ds = limit(data::load_dataset(require(c, "data.eval", "--data")), c.get_int("eval.max_images"));
  std::filesystem::create_directories(dir);
  write_resolved(c, "embed");
  const auto pred = predict_poses(ck.model, ds.images);
  data::NdArray z;
  z.dtype = data::DType::F64;
  z.dims = {pred.size(), static_cast<std::uint64_t>(ck.model.config().z_dim)};
  for (const auto& p : pred) z.values.insert(z.values.end(), p.z.begin(), p.z.end());
  data::write_stack(dir + "/embeddings.tvst", z);
  std::ostringstream poses;
  poses << "index\tlabel\ttheta\ttx\tty\n";
  for (std::size_t i = 0; i < pred.size(); ++i)
    poses << i << '\t' << (ds.labels.empty() ? -1 : ds.labels[i]) << '\t' << format_double(pred[i].theta) << '\t'
          << format_double(pred[i].tx_px) << '\t' << format_double(pred[i].ty_px) << '\n';
  const std::string t = poses.str();
  write_file_bytes_atomic(dir + "/poses.tsv", std::vector<std::uint8_t>(t.begin(), t.end()));
  out << "wrote " << pred.size() << " embeddings to " << dir << "/embeddings.tvst\n";
  return 0;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Translation- and rotation-equivariant VAE: datasets, training, evaluation"};
  app.require_subcommand(1, 1);
  Flags f;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"make-dataset", "synthesize a dataset (mnist-u, mnist-n, multi, shapes)"},
      {"train", "train a model on a dataset directory"},
      {"eval", "pose, clustering and rotation-RMSE metrics"},
      {"detect", "multi-object detection from the attention map"},
      {"reconstruct", "pose-aligned reconstructions as PNG grids"},
      {"embed", "export latent codes as a stack file"}};
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "flat key=value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "random seed");
    sub->add_option("--group", f.group, "rotation group")->check(CLI::IsMember({"p4", "p8", "p16"}));
    sub->add_option("--z-dim", f.z_dim, "semantic latent dimension");
    sub->add_option("--variant", f.variant,
                    name == "make-dataset" ? "dataset kind: mnist-u, mnist-n, multi, shapes"
                                           : "model variant: V1, V2, V3, FULL, FULL_P4, FULL_P8, FULL_P16");
    sub->add_option("--out", f.out, "output directory (default $TVAE_OUTPUT_ROOT/<command>)");
    sub->add_option("--device", f.device, "compute device (cpu)");
    sub->add_option("--epochs", f.epochs, "maximum training epochs");
    sub->add_option("--temperature-schedule", f.temperature_schedule, "linear:START:END:FRACTION or const:VALUE");
    sub->add_option("--data", f.data, "dataset directory");
    sub->add_option("--checkpoint", f.checkpoint, "model checkpoint file");
    sub->add_option("--set", f.overrides, "override a config key, KEY=VALUE (repeatable)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const ExperimentConfig c = resolve(command, f);
    if (command == "make-dataset") return cmd_make_dataset(c, out);
    if (command == "train") return cmd_train(c, out);
    if (command == "eval") return cmd_eval(c, out);
    if (command == "detect") return cmd_detect(c, out);
    if (command == "reconstruct") return cmd_reconstruct(c, out);
    return cmd_embed(c, out);
  } catch (const std::exception& e) {
    err << "tvae " << command << ": error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace tvae::cli
