#pragma once

// Model checkpoints.
//
// Layout (all integers little-endian):
//   8 bytes   magic "TVAECKPT"
//   u32       format version (1)
//   u32       metadata length M
//   M bytes   metadata, "key=value" lines (model configuration and extras)
//   u32       parameter count P
//   P times:
//     u32     name length L, then L bytes of name
//     u32     rank R, then R x u32 dims
//     f32 x prod(dims) values
//
// Every parameter, including the frozen Fourier frequency matrix, is stored,
// so a loaded model decodes exactly as the saved one did.

#include <charconv>
#include <cstdint>
#include <string>
#include <utility>

#include "tvae/binary_io.hpp"
#include "tvae/kv.hpp"
#include "tvae/model.hpp"

namespace tvae {

inline constexpr char kCheckpointMagic[] = "TVAECKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string to_string(ThetaPrior p) { return p == ThetaPrior::Normal ? "normal" : "uniform"; }

inline ThetaPrior theta_prior_from_string(const std::string& s) {
  if (s == "uniform") return ThetaPrior::Uniform;
  if (s == "normal") return ThetaPrior::Normal;
  throw InvalidArgument("theta prior must be 'uniform' or 'normal', got '" + s + "'");
}

namespace detail {

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw InvalidArgument("key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("key '" + key + "': expected a number, got '" + v + "'");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidArgument("key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace detail

inline KeyValues model_config_to_kv(const ModelConfig& c) {
  KeyValues kv;
  kv["model.variant"] = to_string(c.variant);
  kv["model.r"] = std::to_string(c.r);
  kv["model.z_dim"] = std::to_string(c.z_dim);
  kv["model.in_channels"] = std::to_string(c.in_channels);
  kv["model.image_height"] = std::to_string(c.image_height);
  kv["model.image_width"] = std::to_string(c.image_width);
  kv["model.kernel_size"] = std::to_string(c.kernel_size);
  kv["model.channels"] = std::to_string(c.channels);
  kv["model.n_pointwise_layers"] = std::to_string(c.n_pointwise_layers);
  kv["model.generator.n_layers"] = std::to_string(c.generator.n_layers);
  kv["model.generator.hidden_units"] = std::to_string(c.generator.hidden_units);
  kv["model.generator.output_mode"] = to_string(c.generator.output_mode);
  kv["model.generator.per_pixel_sigma"] = c.generator.per_pixel_sigma ? "true" : "false";
  kv["model.generator.n_freq"] = std::to_string(c.generator.n_freq);
  kv["model.generator.fourier_scale"] = format_double(c.generator.fourier_scale);
  kv["model.theta_prior"] = to_string(c.theta_prior);
  kv["model.theta_prior_std"] = format_double(c.theta_prior_std);
  kv["model.translation_std_px"] = format_double(c.translation_std_px);
  kv["model.seed"] = std::to_string(c.seed);
  return kv;
}

// Overlays the "model.*" keys present in kv onto base.
inline ModelConfig model_config_from_kv(const KeyValues& kv, ModelConfig c = {}) {
  using detail::parse_bool;
  using detail::parse_int;
  using detail::parse_real;
  auto get = [&](const char* key, auto&& apply) {
    if (auto it = kv.find(key); it != kv.end()) apply(std::string(key), it->second);
  };
  auto as_int = [](int& dst) { return [&dst](const std::string& k, const std::string& v) { dst = static_cast<int>(parse_int(k, v)); }; };
  auto as_real = [](double& dst) { return [&dst](const std::string& k, const std::string& v) { dst = parse_real(k, v); }; };
  get("model.variant", [&](const std::string&, const std::string& v) { c.variant = variant_from_string(v); });
  get("model.r", as_int(c.r));
  get("model.z_dim", as_int(c.z_dim));
  get("model.in_channels", as_int(c.in_channels));
  get("model.image_height", as_int(c.image_height));
  get("model.image_width", as_int(c.image_width));
  get("model.kernel_size", as_int(c.kernel_size));
  get("model.channels", as_int(c.channels));
  get("model.n_pointwise_layers", as_int(c.n_pointwise_layers));
  get("model.generator.n_layers", as_int(c.generator.n_layers));
  get("model.generator.hidden_units", as_int(c.generator.hidden_units));
  get("model.generator.output_mode",
      [&](const std::string&, const std::string& v) { c.generator.output_mode = output_mode_from_string(v); });
  get("model.generator.per_pixel_sigma",
      [&](const std::string& k, const std::string& v) { c.generator.per_pixel_sigma = parse_bool(k, v); });
  get("model.generator.n_freq", as_int(c.generator.n_freq));
  get("model.generator.fourier_scale", as_real(c.generator.fourier_scale));
  get("model.theta_prior", [&](const std::string&, const std::string& v) { c.theta_prior = theta_prior_from_string(v); });
  get("model.theta_prior_std", as_real(c.theta_prior_std));
  get("model.translation_std_px", as_real(c.translation_std_px));
  get("model.seed", [&](const std::string& k, const std::string& v) {
    const long long s = parse_int(k, v);
    if (s < 0) throw InvalidArgument("key '" + k + "': seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  });
  return c;
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(Model<T>& model, const KeyValues& extra = {}) {
  KeyValues meta = model_config_to_kv(model.config());
  for (const auto& [k, v] : extra) meta[k] = v;
  const std::string text = format_key_values(meta);
  ByteWriter w;
  w.bytes(kCheckpointMagic, 8);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.str(text);
  const auto params = model.parameters();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(p->name.size()));
    w.str(p->name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (T v : p->value) w.f32_le(static_cast<float>(v));
  }
  return std::move(w.data());
}

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model, const KeyValues& extra = {}) {
  write_file_bytes_atomic(path, serialize_checkpoint(model, extra));
}

template <typename T>
struct LoadedCheckpoint {
  Model<T> model;
  KeyValues metadata;
};

template <typename T>
LoadedCheckpoint<T> parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.str(8, "magic") != std::string(kCheckpointMagic, 8)) r.fail("bad checkpoint magic", 0);
  const std::size_t version_at = r.offset();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version), version_at);
  const auto meta_len = r.le<std::uint32_t>("metadata length");
  const std::size_t meta_at = r.offset();
  std::istringstream meta_stream(r.str(meta_len, "metadata"));
  KeyValues meta;
  try {
    meta = parse_key_values(meta_stream, source);
  } catch (const InvalidArgument& e) {
    r.fail(std::string("bad metadata: ") + e.what(), meta_at);
  }
  LoadedCheckpoint<T> out{Model<T>(model_config_from_kv(meta)), meta};
  auto params = out.model.parameters();
  const std::size_t count_at = r.offset();
  const auto count = r.le<std::uint32_t>("parameter count");
  if (count != params.size())
    r.fail("checkpoint has " + std::to_string(count) + " parameters, configuration implies " +
               std::to_string(params.size()),
           count_at);
  for (auto* p : params) {
    const std::size_t at = r.offset();
    const auto name_len = r.le<std::uint32_t>("parameter name length");
    const std::string name = r.str(name_len, "parameter name");
    if (name != p->name) r.fail("expected parameter '" + p->name + "', found '" + name + "'", at);
    const auto rank = r.le<std::uint32_t>("rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(r.le<std::uint32_t>("dimension"));
    if (shape != p->shape) r.fail("shape mismatch for parameter '" + name + "'", at);
    r.need(4 * p->value.size(), "payload of '" + name + "'");
    for (auto& v : p->value) v = static_cast<T>(r.f32_le("value"));
  }
  if (r.remaining() != 0) r.fail(std::to_string(r.remaining()) + " trailing bytes", r.offset());
  out.model.generator().sync_fourier_from_param();
  return out;
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  return parse_checkpoint<T>(read_file_bytes(path), path);
}

}  // namespace tvae
