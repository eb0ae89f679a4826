#include "tinyformer/model.hpp"

#include <stdexcept>

namespace tinyformer {

namespace {

constexpr std::pair<Preset, std::string_view> kPresetNames[] = {
    {Preset::S, "S"}, {Preset::M, "M"}, {Preset::L, "L"}, {Preset::X, "X"}, {Preset::XL, "XL"}, {Preset::Toy, "Toy"},
};

}  // namespace

std::string_view to_string(Preset p) {
  for (const auto& [k, name] : kPresetNames)
    if (k == p) return name;
  return "?";
}

std::optional<Preset> parse_preset(std::string_view text) {
  for (const auto& [k, name] : kPresetNames)
    if (name == text) return k;
  return std::nullopt;
}

ModelConfig ModelConfig::preset_config(Preset p) {
  ModelConfig c;
  c.preset = p;
  if (p == Preset::Toy) return c;
  // Full-size presets: 640 px input, 300 queries, 80 classes, 64-wide
  // backbone heads, 8 decoder heads.
  struct Dims {
    std::size_t C, back, neck, dec, n_back, n_dec;
  };
  const Dims d = [&]() -> Dims {
    switch (p) {
      case Preset::XL: return {128, 768, 384, 256, 12, 6};
      case Preset::X: return {64, 384, 256, 256, 12, 6};
      case Preset::L: return {32, 384, 256, 256, 12, 4};
      case Preset::M: return {16, 256, 256, 256, 12, 4};
      default: return {16, 192, 192, 192, 12, 4};
    }
  }();
  c.image_size = 640;
  c.base_channels = d.C;
  c.d_back = d.back;
  c.d_neck = d.neck;
  c.d_dec = d.dec;
  c.n_back = d.n_back;
  c.n_dec = d.n_dec;
  c.back_heads = d.back / 64;
  c.dec_heads = 8;
  c.n_queries = 300;
  c.num_classes = 80;
  c.emit_f2_tokens = false;
  return c;
}

void ModelConfig::validate() const {
  if (image_size == 0 || image_size % 32 != 0) {
    throw std::invalid_argument("model: image size must be a positive multiple of 32");
  }
  vit().validate();
  ssa().validate();
  neck_config().validate();
  head().validate();
  if (neck == NeckMode::Baseline3Scale && use_ssa && ssa_variant != SsaVariant::F3Only) {
    throw std::invalid_argument("model: a 3-scale neck without PBM needs the f3_only adapter variant");
  }
  if (neck == NeckMode::PBM && n_bifusion > 0 && use_ssa && ssa_variant == SsaVariant::F3Only) {
    throw std::invalid_argument("model: PBM bi-fusion needs F2, which the f3_only variant does not emit");
  }
  if (!use_ssa && ssa_variant != SsaVariant::Proposed) {
    throw std::invalid_argument("model: ssa_variant is set but the adapter is disabled");
  }
}

VitConfig ModelConfig::vit() const {
  VitConfig v;
  v.d_back = d_back;
  v.n_blocks = n_back;
  v.n_heads = back_heads;
  return v;
}

SsaConfig ModelConfig::ssa() const {
  SsaConfig s;
  s.enabled = use_ssa;
  s.variant = ssa_variant;
  s.base_channels = base_channels;
  s.d_back = d_back;
  s.d_neck = d_neck;
  s.surrogate_f2 = !use_ssa && neck == NeckMode::PBM && (n_bifusion > 0 || emit_f2_tokens);
  return s;
}

NeckConfig ModelConfig::neck_config() const {
  NeckConfig n;
  n.mode = neck;
  n.d_neck = d_neck;
  n.n_bifusion = n_bifusion;
  n.fusion_mode = fusion;
  n.emit_f2_tokens = emit_f2_tokens;
  n.f2_width = ssa().f2_width();
  return n;
}

HeadConfig ModelConfig::head() const {
  HeadConfig h;
  h.n_queries = n_queries;
  h.d_dec = d_dec;
  h.n_layers = n_dec;
  h.n_heads = dec_heads;
  h.num_classes = num_classes;
  return h;
}

std::vector<int> ModelConfig::decoder_levels() const {
  if (emit_f2_tokens) return {2, 3, 4, 5};
  return {3, 4, 5};
}

std::string_view to_string(AblationArm a) {
  switch (a) {
    case AblationArm::Baseline: return "baseline";
    case AblationArm::SsaOnly: return "+SSA";
    case AblationArm::PbmOnly: return "+PBM";
    default: return "+SSA+PBM";
  }
}

ModelConfig with_arm(ModelConfig cfg, AblationArm arm) {
  const bool ssa = arm == AblationArm::SsaOnly || arm == AblationArm::Both;
  const bool pbm = arm == AblationArm::PbmOnly || arm == AblationArm::Both;
  cfg.use_ssa = ssa;
  cfg.neck = pbm ? NeckMode::PBM : NeckMode::Baseline3Scale;
  cfg.ssa_variant = ssa && !pbm ? SsaVariant::F3Only : SsaVariant::Proposed;
  if (!pbm) cfg.emit_f2_tokens = false;
  return cfg;
}

template <typename T>
Detector<T>::Detector(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  vit_ = VisionTransformer<T>(store_, "backbone", cfg.vit(), seed);
  ssa_ = SpatialSemanticAdapter<T>(store_, "ssa", cfg.ssa(), seed);
  neck_ = Neck<T>(store_, "neck", cfg.neck_config(), seed);
  decoder_ = Decoder<T>(store_, "decoder", cfg.head(), cfg.decoder_levels(), cfg.d_neck, seed);
}

template <typename T>
ForwardResult<T> Detector<T>::forward(Context<T>& ctx, Var<T> image) const {
  ForwardResult<T> r;
  r.pyramid = ssa_(ctx, image, vit_(ctx, image));
  r.neck = neck_(ctx, r.pyramid);
  r.head = decoder_(ctx, r.neck);
  return r;
}

template class Detector<float>;
template class Detector<double>;

}  // namespace tinyformer
