#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tinyformer/layers.hpp"

namespace tinyformer {

struct VitConfig {
  std::size_t d_back = 64;
  std::size_t n_blocks = 4;
  std::size_t n_heads = 4;
  std::size_t patch = 16;
  std::size_t mlp_ratio = 4;

  /// 1-based block indices whose outputs are exported:
  /// (ceil(n/2), ceil(3n/4), n).
  std::array<std::size_t, 3> taps() const;
  void validate() const;
};

/// Fixed 2-D sine/cosine table for a gh x gw token grid, shape (1, 1, gh*gw, d).
/// Channel quarters hold sin(x w_k), cos(x w_k), sin(y w_k), cos(y w_k) with
/// w_k = 10000^(-k / (d/4)). `unit` rescales the grid coordinates.
template <typename T>
Tensor<T> sincos_positions(std::size_t gh, std::size_t gw, std::size_t d, double unit = 1.0);

template <typename T>
struct VitBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Mlp<T> mlp;
};

/// Plain stride-16 transformer. Taps come back as (n, d_back, h/16, w/16) maps.
template <typename T>
class VisionTransformer {
 public:
  VisionTransformer() = default;
  VisionTransformer(ParamStore<T>& store, const std::string& name, const VitConfig& cfg, std::uint64_t seed);

  /// Patch projection plus positions: (n, 1, gh*gw, d_back).
  Var<T> embed(Context<T>& ctx, Var<T> image) const;
  std::array<Var<T>, 3> operator()(Context<T>& ctx, Var<T> image) const;

  const VitConfig& config() const { return cfg_; }
  Tensor<T>& patch_weight() const { return *patch_w_; }
  Tensor<T>& patch_bias() const { return *patch_b_; }
  const std::vector<VitBlock<T>>& blocks() const { return blocks_; }

 private:
  VitConfig cfg_;
  Tensor<T>* patch_w_ = nullptr;
  Tensor<T>* patch_b_ = nullptr;
  std::vector<VitBlock<T>> blocks_;
};

}  // namespace tinyformer
