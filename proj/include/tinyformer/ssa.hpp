#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tinyformer/layers.hpp"

namespace tinyformer {

/// Levels i in {2, 3, 4, 5} at stride 2^i.
template <typename T>
struct FeaturePyramid {
  std::map<int, Var<T>> levels;

  bool has(int level) const { return levels.count(level) != 0; }
  Var<T> at(int level) const;
  std::vector<int> indices() const;
};

enum class SsaVariant { Proposed, UpToF4, UpToF5, F2F3F5, BottleneckSPB, EarlyF2Fusion, F3Only };

std::string_view to_string(SsaVariant v);
std::optional<SsaVariant> parse_ssa_variant(std::string_view text);

struct SsaConfig {
  /// Off: no image branch. The pyramid is then built from the ViT taps alone
  /// (F3 = 1x1(Up(F3vit)), F4 = 1x1(F4vit), F5 = 3x3 s2(F5vit)).
  bool enabled = true;
  SsaVariant variant = SsaVariant::Proposed;
  std::size_t base_channels = 16;  // C
  std::size_t d_back = 64;
  std::size_t d_neck = 64;
  /// With the adapter off: also emit F2 = Up(Up(F3vit)) at width d_back.
  bool surrogate_f2 = false;

  void validate() const;
  /// Number of SDE stages the variant runs.
  std::size_t sde_depth() const;
  bool emits_f2() const;
  /// Channel width of the emitted F2 (2C with the adapter, d_back otherwise).
  std::size_t f2_width() const;
};

/// 1x1 reduce to `hidden` -> 3x3 (stride s) -> 1x1 expand, all conv blocks.
template <typename T>
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(ParamStore<T>& store, const std::string& name, std::size_t c_in, std::size_t hidden, std::size_t c_out,
             std::size_t stride, std::uint64_t seed);
  Var<T> operator()(Context<T>& ctx, Var<T> x) const;

 private:
  ConvBlock<T> reduce_, mid_, expand_;
};

template <typename T>
class SpatialSemanticAdapter {
 public:
  SpatialSemanticAdapter() = default;
  SpatialSemanticAdapter(ParamStore<T>& store, const std::string& name, const SsaConfig& cfg, std::uint64_t seed);

  /// Runs SDE stages 1..n on the image; n = 0 returns it unchanged.
  Var<T> sde(Context<T>& ctx, Var<T> image, std::size_t n) const;

  /// taps: F3vit, F4vit, F5vit at stride 16 and width d_back.
  FeaturePyramid<T> operator()(Context<T>& ctx, Var<T> image, const std::array<Var<T>, 3>& taps) const;

  const SsaConfig& config() const { return cfg_; }
  const std::vector<ConvBlock<T>>& sde_stages() const { return stages_; }
  const ConvBlock<T>& fuse3() const { return fuse3_; }

 private:
  SsaConfig cfg_;
  std::vector<ConvBlock<T>> stages_;
  ConvBlock<T> fuse2_, fuse3_, spb4_, spb5_, fuse4_, fuse5_;
  Bottleneck<T> bottleneck4_, bottleneck5_;
};

}  // namespace tinyformer
