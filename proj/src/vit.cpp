#include "tinyformer/vit.hpp"

#include <cmath>
#include <stdexcept>

namespace tinyformer {

std::array<std::size_t, 3> VitConfig::taps() const {
  return {(n_blocks + 1) / 2, (3 * n_blocks + 3) / 4, n_blocks};
}

void VitConfig::validate() const {
  if (patch != 16) throw std::invalid_argument("vit: patch size must be 16");
  if (n_blocks == 0) throw std::invalid_argument("vit: need at least one block");
  if (d_back == 0 || d_back % 4 != 0) throw std::invalid_argument("vit: d_back must be a positive multiple of 4");
  if (n_heads == 0 || d_back % n_heads != 0) throw std::invalid_argument("vit: d_back not divisible by n_heads");
}

template <typename T>
Tensor<T> sincos_positions(std::size_t gh, std::size_t gw, std::size_t d, double unit) {
  if (d % 4 != 0) throw std::invalid_argument("sincos_positions: width must be a multiple of 4");
  const std::size_t q = d / 4;
  Tensor<T> pos(Shape{1, 1, gh * gw, d});
  for (std::size_t y = 0; y < gh; ++y)
    for (std::size_t x = 0; x < gw; ++x) {
      T* row = &pos[(y * gw + x) * d];
      for (std::size_t k = 0; k < q; ++k) {
        const double omega = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(q));
        const double ax = unit * static_cast<double>(x) * omega, ay = unit * static_cast<double>(y) * omega;
        row[k] = static_cast<T>(std::sin(ax));
        row[q + k] = static_cast<T>(std::cos(ax));
        row[2 * q + k] = static_cast<T>(std::sin(ay));
        row[3 * q + k] = static_cast<T>(std::cos(ay));
      }
    }
  return pos;
}

template <typename T>
VisionTransformer<T>::VisionTransformer(ParamStore<T>& store, const std::string& name, const VitConfig& cfg,
                                        std::uint64_t seed)
    : cfg_(cfg) {
  cfg.validate();
  const std::size_t fan_in = 3 * cfg.patch * cfg.patch;
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  const std::string wname = name + ".patch.weight";
  patch_w_ = &store.add(wname, Tensor<T>::create(Shape{cfg.d_back, 3, cfg.patch, cfg.patch},
                                                 Uniform{derive_seed(seed, wname), -bound, bound}));
  patch_b_ = &store.add(name + ".patch.bias", Tensor<T>(Shape{1, 1, 1, cfg.d_back}));
  blocks_.reserve(cfg.n_blocks);
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const std::string p = name + ".block" + std::to_string(b);
    blocks_.push_back(VitBlock<T>{LayerNorm<T>(store, p + ".ln1", cfg.d_back), LayerNorm<T>(store, p + ".ln2", cfg.d_back),
                                  MultiHeadAttention<T>(store, p + ".attn", cfg.d_back, cfg.n_heads, seed),
                                  Mlp<T>(store, p + ".mlp", cfg.d_back, cfg.mlp_ratio, Activation::GELU, seed)});
  }
}

template <typename T>
Var<T> VisionTransformer<T>::embed(Context<T>& ctx, Var<T> image) const {
  const Shape s = image.shape();
  if (s.c != 3) throw std::invalid_argument("vit: expected a 3-channel image, got " + s.str());
  if (s.h % cfg_.patch != 0 || s.w % cfg_.patch != 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("vit: image extents must be positive multiples of 16, got " + s.str());
  }
  auto grid = conv2d(image, ctx.tape.leaf(*patch_w_), std::optional<Var<T>>(ctx.tape.leaf(*patch_b_)), cfg_.patch, 0);
  auto tokens = to_tokens(grid);
  auto pos = ctx.tape.constant(sincos_positions<T>(s.h / cfg_.patch, s.w / cfg_.patch, cfg_.d_back));
  return add(tokens, broadcast_batch(pos, s.n));
}

template <typename T>
std::array<Var<T>, 3> VisionTransformer<T>::operator()(Context<T>& ctx, Var<T> image) const {
  const std::size_t gh = image.shape().h / cfg_.patch, gw = image.shape().w / cfg_.patch;
  auto x = embed(ctx, image);
  const auto taps = cfg_.taps();
  std::array<Var<T>, 3> out{};
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& blk = blocks_[b];
    auto h = blk.ln1(ctx, x);
    x = add(x, blk.attn(ctx, h, h));
    x = add(x, blk.mlp(ctx, blk.ln2(ctx, x)));
    for (std::size_t t = 0; t < 3; ++t)
      if (taps[t] == b + 1) out[t] = from_tokens(x, gh, gw);
  }
  return out;
}

template Tensor<float> sincos_positions<float>(std::size_t, std::size_t, std::size_t, double);
template Tensor<double> sincos_positions<double>(std::size_t, std::size_t, std::size_t, double);
template class VisionTransformer<float>;
template class VisionTransformer<double>;

}  // namespace tinyformer
