#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "tinyformer/ssa.hpp"

namespace tinyformer {

enum class NeckMode { Baseline3Scale, PBM };
enum class FusionMode { AddDeepConcatShallow, AddShallowConcatDeep };

std::string_view to_string(NeckMode m);
std::string_view to_string(FusionMode m);
std::optional<NeckMode> parse_neck_mode(std::string_view text);
std::optional<FusionMode> parse_fusion_mode(std::string_view text);

struct NeckConfig {
  NeckMode mode = NeckMode::PBM;
  std::size_t d_neck = 64;
  /// 1 covers level 3, 2 covers levels 3 and 4. 0 runs the baseline path.
  std::size_t n_bifusion = 2;
  FusionMode fusion_mode = FusionMode::AddDeepConcatShallow;
  /// Also emit the projected F2 as an output level.
  bool emit_f2_tokens = false;
  /// Channel width of the incoming F2.
  std::size_t f2_width = 32;

  void validate() const;
  bool uses_f2() const { return mode == NeckMode::PBM && n_bifusion > 0; }
};

/// Two-input CSP-style block. Concat -> 1x1 to d, then three rounds of
/// "keep one half, transform the other with two 3x3 blocks"; the kept halves
/// and the last transformed quarter-of-a-quarter are concatenated and mixed
/// by a final 1x1. Needs d divisible by 8.
template <typename T>
class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(ParamStore<T>& store, const std::string& name, std::size_t c_a, std::size_t c_b, std::size_t d,
              std::uint64_t seed);

  Var<T> operator()(Context<T>& ctx, Var<T> a, Var<T> b) const;

 private:
  std::size_t c_a_ = 0, c_b_ = 0, d_ = 0;
  ConvBlock<T> entry_, exit_;
  std::array<std::array<ConvBlock<T>, 2>, 3> stages_;
};

/// Align-then-inject fusion at one level:
///   proposed: P(F_cur + Up(1x1(F_next)), 3x3s2(F_prev))
///   swapped:  P(F_cur + 3x3s2(F_prev), Up(1x1(F_next)))
template <typename T>
class BiFusion {
 public:
  BiFusion() = default;
  BiFusion(ParamStore<T>& store, const std::string& name, std::size_t d, FusionMode mode, std::uint64_t seed);

  Var<T> operator()(Context<T>& ctx, Var<T> prev, Var<T> cur, Var<T> next) const;

 private:
  std::size_t d_ = 0;
  FusionMode mode_ = FusionMode::AddDeepConcatShallow;
  ConvBlock<T> deep_, shallow_;
  FusionBlock<T> fuse_;
};

/// Baseline: FPN top-down (1x1 lateral, Up, add, 3x3) then PAN bottom-up
/// (3x3 s2, add, 3x3). PBM replaces the top-down step at the covered levels
/// with bi-fusion blocks that read the input pyramid only, sets
/// F5' = 3x3s2(F4') + 1x1(F5), and keeps the PAN leg.
template <typename T>
class Neck {
 public:
  Neck() = default;
  Neck(ParamStore<T>& store, const std::string& name, const NeckConfig& cfg, std::uint64_t seed);

  FeaturePyramid<T> operator()(Context<T>& ctx, const FeaturePyramid<T>& in) const;

  /// The top-down / bi-fusion stage alone (levels 3..5 before PAN).
  FeaturePyramid<T> top_down(Context<T>& ctx, const FeaturePyramid<T>& in) const;

  const NeckConfig& config() const { return cfg_; }
  const BiFusion<T>& bifusion(int level) const { return level == 3 ? bif3_ : bif4_; }
  const ConvBlock<T>& f2_proj() const { return f2_proj_; }

 private:
  void pan(Context<T>& ctx, FeaturePyramid<T>& p) const;
  void check_level(const FeaturePyramid<T>& in, int level, std::size_t width) const;

  NeckConfig cfg_;
  ConvBlock<T> lat3_, lat4_, lat5_, td3_, td4_, down3_, down4_, bu4_, bu5_;
  ConvBlock<T> f2_proj_, top5_;
  BiFusion<T> bif3_, bif4_;
};

}  // namespace tinyformer
