#include "tinyformer/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace tinyformer {

namespace {

template <typename T>
Tensor<T> kaiming_uniform(Shape shape, std::size_t fan_in, std::uint64_t seed) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor<T>::create(shape, Uniform{seed, -bound, bound});
}

template <typename T>
Tensor<T> trunc_normal(Shape shape, double std, std::uint64_t seed) {
  Tensor<T> t(shape);
  Rng rng(seed);
  for (auto& x : t.data()) x = static_cast<T>(std * rng.truncated_normal());
  return t;
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, std::size_t c_in, std::size_t c_out,
                  std::size_t kernel, std::size_t stride, bool with_bias, std::uint64_t seed)
    : c_in_(c_in), c_out_(c_out), kernel_(kernel), stride_(stride) {
  if (kernel != 1 && kernel != 3) throw std::invalid_argument(name + ": kernel must be 1 or 3");
  if (stride != 1 && stride != 2) throw std::invalid_argument(name + ": stride must be 1 or 2");
  const std::string wname = name + ".weight";
  weight_ = &store.add(wname, kaiming_uniform<T>(Shape{c_out, c_in, kernel, kernel}, c_in * kernel * kernel,
                                                 derive_seed(seed, wname)));
  if (with_bias) bias_ = &store.add(name + ".bias", Tensor<T>(Shape{1, 1, 1, c_out}));
}

template <typename T>
Var<T> Conv2d<T>::operator()(Context<T>& ctx, Var<T> x) const {
  const Shape s = x.shape();
  if (s.c != c_in_) {
    throw std::invalid_argument("conv2d: expected " + std::to_string(c_in_) + " input channels, got " +
                                std::to_string(s.c));
  }
  if (stride_ == 2 && (s.h % 2 != 0 || s.w % 2 != 0)) {
    throw std::invalid_argument("conv2d: stride 2 needs even spatial extents, got " + s.str());
  }
  std::optional<Var<T>> b;
  if (bias_) b = ctx.tape.leaf(*bias_);
  return conv2d(x, ctx.tape.leaf(*weight_), b, stride_, pad());
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParamStore<T>& store, const std::string& name, std::size_t channels, double momentum,
                            double eps)
    : momentum_(momentum), eps_(eps) {
  const Shape s{1, 1, 1, channels};
  gamma_ = &store.add(name + ".gamma", Tensor<T>::create(s, Ones{}));
  beta_ = &store.add(name + ".beta", Tensor<T>(s));
  mean_ = &store.add(name + ".running_mean", Tensor<T>(s), false);
  var_ = &store.add(name + ".running_var", Tensor<T>::create(s, Ones{}), false);
}

template <typename T>
Var<T> BatchNorm2d<T>::operator()(Context<T>& ctx, Var<T> x) const {
  auto g = ctx.tape.leaf(*gamma_);
  auto b = ctx.tape.leaf(*beta_);
  if (!ctx.training) return batch_norm_infer(x, g, b, std::span<const T>(mean_->data()), std::span<const T>(var_->data()), eps_);
  BatchStats stats;
  auto y = batch_norm_train(x, g, b, eps_, &stats);
  const double correction =
      stats.count > 1 ? static_cast<double>(stats.count) / static_cast<double>(stats.count - 1) : 1.0;
  for (std::size_t c = 0; c < stats.mean.size(); ++c) {
    (*mean_)[c] = static_cast<T>((1.0 - momentum_) * (*mean_)[c] + momentum_ * stats.mean[c]);
    (*var_)[c] = static_cast<T>((1.0 - momentum_) * (*var_)[c] + momentum_ * stats.var[c] * correction);
  }
  return y;
}

template <typename T>
ConvBlock<T>::ConvBlock(ParamStore<T>& store, const std::string& name, std::size_t c_in, std::size_t c_out,
                        std::size_t kernel, std::size_t stride, std::uint64_t seed)
    : conv_(store, name + ".conv", c_in, c_out, kernel, stride, false, seed), norm_(store, name + ".bn", c_out) {}

template <typename T>
Var<T> ConvBlock<T>::operator()(Context<T>& ctx, Var<T> x) const {
  return silu(norm_(ctx, conv_(ctx, x)));
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::uint64_t seed, bool with_bias)
    : in_(in), out_(out) {
  const std::string wname = name + ".weight";
  weight_ = &store.add(wname, trunc_normal<T>(Shape{1, 1, in, out}, 0.02, derive_seed(seed, wname)));
  if (with_bias) bias_ = &store.add(name + ".bias", Tensor<T>(Shape{1, 1, 1, out}));
}

template <typename T>
Var<T> Linear<T>::operator()(Context<T>& ctx, Var<T> x) const {
  std::optional<Var<T>> b;
  if (bias_) b = ctx.tape.leaf(*bias_);
  return linear(x, ctx.tape.leaf(*weight_), b);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t width, double eps) : eps_(eps) {
  gamma_ = &store.add(name + ".gamma", Tensor<T>::create(Shape{1, 1, 1, width}, Ones{}));
  beta_ = &store.add(name + ".beta", Tensor<T>(Shape{1, 1, 1, width}));
}

template <typename T>
Var<T> LayerNorm<T>::operator()(Context<T>& ctx, Var<T> x) const {
  return layer_norm(x, ctx.tape.leaf(*gamma_), ctx.tape.leaf(*beta_), eps_);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t width,
                                          std::size_t n_heads, std::uint64_t seed)
    : n_heads_(n_heads),
      q_(store, name + ".q", width, width, seed),
      k_(store, name + ".k", width, width, seed),
      v_(store, name + ".v", width, width, seed),
      o_(store, name + ".o", width, width, seed) {
  if (n_heads == 0 || width % n_heads != 0) {
    throw std::invalid_argument(name + ": width " + std::to_string(width) + " not divisible by " +
                                std::to_string(n_heads) + " heads");
  }
}

template <typename T>
Var<T> MultiHeadAttention<T>::operator()(Context<T>& ctx, Var<T> queries, Var<T> keys, Var<T> values) const {
  auto q = q_(ctx, queries);
  auto k = k_(ctx, keys);
  auto v = v_(ctx, values);
  return o_(ctx, attention_core(q, k, v, n_heads_));
}

template <typename T>
Mlp<T>::Mlp(ParamStore<T>& store, const std::string& name, std::size_t width, std::size_t hidden_mult,
            Activation act, std::uint64_t seed)
    : act_(act),
      fc1_(store, name + ".fc1", width, width * hidden_mult, seed),
      fc2_(store, name + ".fc2", width * hidden_mult, width, seed) {}

template <typename T>
Var<T> Mlp<T>::operator()(Context<T>& ctx, Var<T> x) const {
  return fc2_(ctx, activate(fc1_(ctx, x), act_));
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class ConvBlock<float>;
template class ConvBlock<double>;
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class Mlp<float>;
template class Mlp<double>;

}  // namespace tinyformer
