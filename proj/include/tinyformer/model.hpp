#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "tinyformer/head.hpp"
#include "tinyformer/neck.hpp"
#include "tinyformer/ssa.hpp"
#include "tinyformer/vit.hpp"

namespace tinyformer {

enum class Preset { S, M, L, X, XL, Toy };

std::string_view to_string(Preset p);
std::optional<Preset> parse_preset(std::string_view text);

struct ModelConfig {
  Preset preset = Preset::Toy;
  std::size_t image_size = 64;
  std::size_t base_channels = 16;  // C
  std::size_t d_back = 64, d_neck = 64, d_dec = 64;
  std::size_t n_back = 4, n_dec = 2;
  std::size_t back_heads = 4, dec_heads = 4;
  std::size_t n_queries = 10;
  std::size_t num_classes = 3;

  bool use_ssa = true;
  SsaVariant ssa_variant = SsaVariant::Proposed;
  NeckMode neck = NeckMode::PBM;
  std::size_t n_bifusion = 2;
  FusionMode fusion = FusionMode::AddDeepConcatShallow;
  bool emit_f2_tokens = false;

  /// Backbone/adapter/neck/decoder widths and depths of a named preset; the
  /// component switches keep their defaults (SSA + PBM).
  static ModelConfig preset_config(Preset p);

  void validate() const;
  VitConfig vit() const;
  SsaConfig ssa() const;
  NeckConfig neck_config() const;
  HeadConfig head() const;
  std::vector<int> decoder_levels() const;
};

/// The four component switches of the core ablation.
enum class AblationArm { Baseline, SsaOnly, PbmOnly, Both };
std::string_view to_string(AblationArm a);
/// baseline: plain ViT pyramid + FPN/PAN; +SSA: F3-only adapter + FPN/PAN;
/// +PBM: plain pyramid with an upsampled-ViT F2 + PBM; both: adapter + PBM.
ModelConfig with_arm(ModelConfig cfg, AblationArm arm);

template <typename T>
struct ForwardResult {
  FeaturePyramid<T> pyramid;
  FeaturePyramid<T> neck;
  HeadOutput<T> head;
};

template <typename T>
class Detector {
 public:
  Detector(const ModelConfig& cfg, std::uint64_t seed);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  ForwardResult<T> forward(Context<T>& ctx, Var<T> image) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const VisionTransformer<T>& backbone() const { return vit_; }
  const SpatialSemanticAdapter<T>& adapter() const { return ssa_; }
  const Neck<T>& neck() const { return neck_; }
  const Decoder<T>& decoder() const { return decoder_; }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  VisionTransformer<T> vit_;
  SpatialSemanticAdapter<T> ssa_;
  Neck<T> neck_;
  Decoder<T> decoder_;
};

}  // namespace tinyformer
