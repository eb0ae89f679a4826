#pragma once

#include <cstdint>
#include <string>

#include "tinyformer/ops.hpp"
#include "tinyformer/param_store.hpp"
#include "tinyformer/tape.hpp"

namespace tinyformer {

enum class Activation { SiLU, GELU };

/// Per-forward state: the tape being recorded and the train/eval switch.
template <typename T>
struct Context {
  Tape<T>& tape;
  bool training = false;
};

template <typename T>
Var<T> activate(Var<T> x, Activation act) {
  return act == Activation::SiLU ? silu(x) : gelu(x);
}

/// k x k convolution (k in {1, 3}) with zero padding k / 2. Weights use
/// Kaiming-uniform fan-in init (bound sqrt(6 / fan_in)), biases start at zero.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
         std::size_t stride, bool with_bias, std::uint64_t seed);

  /// Throws on channel mismatch or an odd spatial extent with stride 2.
  Var<T> operator()(Context<T>& ctx, Var<T> x) const;

  std::size_t c_in() const { return c_in_; }
  std::size_t c_out() const { return c_out_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }
  std::size_t pad() const { return kernel_ / 2; }
  Tensor<T>& weight() const { return *weight_; }
  Tensor<T>* bias() const { return bias_; }

 private:
  std::size_t c_in_ = 0, c_out_ = 0, kernel_ = 1, stride_ = 1;
  Tensor<T>* weight_ = nullptr;
  Tensor<T>* bias_ = nullptr;
};

/// BatchNorm over (n, h, w) per channel. Training mode normalizes with batch
/// statistics and folds them into the running estimates
/// (running = (1 - momentum) running + momentum batch, unbiased variance);
/// eval mode uses the running estimates only.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& store, const std::string& name, std::size_t channels, double momentum = 0.1,
              double eps = 1e-5);

  Var<T> operator()(Context<T>& ctx, Var<T> x) const;

  Tensor<T>& gamma() const { return *gamma_; }
  Tensor<T>& beta() const { return *beta_; }
  Tensor<T>& running_mean() const { return *mean_; }
  Tensor<T>& running_var() const { return *var_; }

 private:
  double momentum_ = 0.1, eps_ = 1e-5;
  Tensor<T>* gamma_ = nullptr;
  Tensor<T>* beta_ = nullptr;
  Tensor<T>* mean_ = nullptr;
  Tensor<T>* var_ = nullptr;
};

/// conv -> BatchNorm -> SiLU. The convolution carries no bias.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParamStore<T>& store, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t kernel,
            std::size_t stride, std::uint64_t seed);

  Var<T> operator()(Context<T>& ctx, Var<T> x) const;

  const Conv2d<T>& conv() const { return conv_; }
  const BatchNorm2d<T>& norm() const { return norm_; }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> norm_;
};

/// Row-wise affine map y = x W + b. Weights are truncated-normal, std 0.02.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
         bool with_bias = true);

  Var<T> operator()(Context<T>& ctx, Var<T> x) const;

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  Tensor<T>& weight() const { return *weight_; }
  Tensor<T>* bias() const { return bias_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor<T>* weight_ = nullptr;
  Tensor<T>* bias_ = nullptr;
};

/// LayerNorm over the last axis (the channel axis of a token matrix).
template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t width, double eps = 1e-6);

  Var<T> operator()(Context<T>& ctx, Var<T> x) const;

 private:
  double eps_ = 1e-6;
  Tensor<T>* gamma_ = nullptr;
  Tensor<T>* beta_ = nullptr;
};

/// Multi-head scaled dot-product attention with input and output projections.
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, std::size_t width, std::size_t n_heads,
                     std::uint64_t seed);

  /// queries: (n, 1, Tq, d); keys: (n, 1, Tkv, d); values default to keys.
  Var<T> operator()(Context<T>& ctx, Var<T> queries, Var<T> keys) const { return (*this)(ctx, queries, keys, keys); }
  Var<T> operator()(Context<T>& ctx, Var<T> queries, Var<T> keys, Var<T> values) const;

  std::size_t heads() const { return n_heads_; }
  const Linear<T>& q_proj() const { return q_; }
  const Linear<T>& k_proj() const { return k_; }
  const Linear<T>& v_proj() const { return v_; }
  const Linear<T>& o_proj() const { return o_; }

 private:
  std::size_t n_heads_ = 1;
  Linear<T> q_, k_, v_, o_;
};

/// Linear(d -> hidden_mult d) -> activation -> Linear(hidden_mult d -> d).
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, std::size_t width, std::size_t hidden_mult, Activation act,
      std::uint64_t seed);

  Var<T> operator()(Context<T>& ctx, Var<T> x) const;

  const Linear<T>& fc1() const { return fc1_; }
  const Linear<T>& fc2() const { return fc2_; }

 private:
  Activation act_ = Activation::SiLU;
  Linear<T> fc1_, fc2_;
};

}  // namespace tinyformer
