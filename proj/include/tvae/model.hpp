#pragma once

#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "tvae/encoder.hpp"
#include "tvae/errors.hpp"
#include "tvae/generator.hpp"
#include "tvae/geometry.hpp"
#include "tvae/image.hpp"
#include "tvae/latent.hpp"
#include "tvae/rng.hpp"

namespace tvae {

// Model variants: three ablations and the full model at three group orders.
enum class VariantId {
  V1_translation_only,  // plain convolution, posterior without rotation axis
  V2_gconv_collapsed,   // group convolution, rotation axis collapsed before heads
  V3_no_offset,         // full model without theta offsets
  FULL_P4,
  FULL_P8,
  FULL_P16,
};

inline std::string to_string(VariantId v) {
  switch (v) {
    case VariantId::V1_translation_only: return "V1";
    case VariantId::V2_gconv_collapsed: return "V2";
    case VariantId::V3_no_offset: return "V3";
    case VariantId::FULL_P4: return "FULL_P4";
    case VariantId::FULL_P8: return "FULL_P8";
    case VariantId::FULL_P16: return "FULL_P16";
  }
  return "FULL_P4";
}

inline VariantId variant_from_string(const std::string& s) {
  if (s == "V1" || s == "V1_translation_only") return VariantId::V1_translation_only;
  if (s == "V2" || s == "V2_gconv_collapsed") return VariantId::V2_gconv_collapsed;
  if (s == "V3" || s == "V3_no_offset") return VariantId::V3_no_offset;
  if (s == "FULL_P4" || s == "P4" || s == "p4") return VariantId::FULL_P4;
  if (s == "FULL_P8" || s == "P8" || s == "p8") return VariantId::FULL_P8;
  if (s == "FULL_P16" || s == "P16" || s == "p16") return VariantId::FULL_P16;
  throw InvalidArgument("unknown variant id '" + s + "'");
}

struct ModelConfig {
  VariantId variant = VariantId::FULL_P4;
  int r = 4;  // group order used by V2/V3; FULL_Pr variants set their own
  int z_dim = 2;
  int in_channels = 1;
  int image_height = 50;
  int image_width = 50;
  int kernel_size = 29;
  int channels = 128;
  int n_pointwise_layers = 3;
  GeneratorConfig generator;
  ThetaPrior theta_prior = ThetaPrior::Uniform;
  double theta_prior_std = std::numbers::pi / 4.0;
  double translation_std_px = 5.0;
  std::uint64_t seed = 0;
};

// Applies the variant switches to a base configuration.
inline ModelConfig build_variant_config(VariantId id, ModelConfig base) {
  base.variant = id;
  switch (id) {
    case VariantId::V1_translation_only: base.r = 1; break;
    case VariantId::V2_gconv_collapsed:
    case VariantId::V3_no_offset: break;
    case VariantId::FULL_P4: base.r = 4; break;
    case VariantId::FULL_P8: base.r = 8; break;
    case VariantId::FULL_P16: base.r = 16; break;
  }
  if (base.r < 1) throw InvalidArgument("group order r must be >= 1");
  base.generator.z_dim = base.z_dim;
  return base;
}

template <typename T>
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& cfg) : cfg_(build_variant_config(cfg.variant, cfg)) {
    EncoderConfig ec;
    ec.in_channels = cfg_.in_channels;
    ec.conv.r = cfg_.r;
    ec.conv.first_kernel_size = cfg_.kernel_size;
    ec.conv.channels = cfg_.channels;
    ec.conv.n_pointwise_layers = cfg_.n_pointwise_layers;
    ec.z_dim = cfg_.z_dim;
    ec.collapse_rotations = cfg_.variant == VariantId::V2_gconv_collapsed;
    if (cfg_.generator.channels() != cfg_.in_channels)
      throw InvalidArgument("generator output channels (" + std::to_string(cfg_.generator.channels()) +
                            ") differ from input channels (" + std::to_string(cfg_.in_channels) + ")");
    Rng rng = derive_stream(cfg_.seed, 0);
    encoder_ = Encoder<T>(ec);
    encoder_.init(rng);
    generator_ = Generator<T>(cfg_.generator, rng);
    grid_ = make_coordinate_grid<T>(cfg_.image_height, cfg_.image_width);
    prior_ = prior_for(cfg_.image_height, cfg_.image_width);
  }

  const ModelConfig& config() const { return cfg_; }
  Encoder<T>& encoder() { return encoder_; }
  const Encoder<T>& encoder() const { return encoder_; }
  Generator<T>& generator() { return generator_; }
  const Generator<T>& generator() const { return generator_; }
  const CoordinateGrid<T>& grid() const { return grid_; }
  const PriorSpec& prior() const { return prior_; }
  int posterior_r() const { return encoder_.config().posterior_r(); }
  bool uses_offsets() const { return cfg_.variant != VariantId::V3_no_offset; }

  // Prior over a grid of arbitrary size (detection on larger canvases).
  PriorSpec prior_for(int height, int width) const {
    return make_prior(posterior_r(), height, width, cfg_.z_dim, cfg_.theta_prior, cfg_.theta_prior_std,
                      cfg_.translation_std_px, uses_offsets());
  }

  PosteriorField<T> encode(const ImageBatch<T>& images) const { return encoder_.encode(images); }

  ParamRefs<T> parameters() {
    ParamRefs<T> out = encoder_.parameters();
    for (auto* p : generator_.parameters()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->count();
    return n;
  }

 private:
  ModelConfig cfg_;
  Encoder<T> encoder_;
  Generator<T> generator_;
  CoordinateGrid<T> grid_;
  PriorSpec prior_;
};

template <typename T>
Model<T> build_variant(VariantId id, const ModelConfig& base) {
  ModelConfig cfg = base;
  cfg.variant = id;
  return Model<T>(cfg);
}

}  // namespace tvae
