#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tinyformer/tape.hpp"
#include "tinyformer/tensor.hpp"

// Differentiable primitives. Every op records its output on the tape of its
// first argument together with a backward rule.
//
// Token matrices are carried as (n, 1, T, d) tensors: one row per token, one
// column per channel. "Row-matrix" ops (linear, layer_norm) treat any tensor as
// (n*c*h) rows of w columns.

namespace tinyformer {

/// Multiply-accumulate counter incremented by conv2d, linear, matmul2d and
/// attention_core as they execute. Used to audit the analytic FLOPs report.
std::uint64_t mac_count();
void reset_mac_count();

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, double factor);
/// Sum of all elements, shape (1, 1, 1, 1).
template <typename T>
Var<T> sum(Var<T> a);
/// Sum of a ⊙ weights with a constant weight tensor of the same shape.
template <typename T>
Var<T> weighted_sum(Var<T> a, const Tensor<T>& weights);
template <typename T>
Var<T> abs(Var<T> a);

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts);
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count);
template <typename T>
std::vector<Var<T>> split_channels(Var<T> x, std::span<const std::size_t> sizes);

/// (1, 1, r, k) x (1, 1, k, s) -> (1, 1, r, s).
template <typename T>
Var<T> matmul2d(Var<T> a, Var<T> b);

/// x: rows of width `in`; weight: (1, 1, in, out); bias: (1, 1, 1, out).
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::optional<Var<T>> bias);

/// Adds a (1, 1, 1, w) row to every row of x.
template <typename T>
Var<T> add_row(Var<T> x, Var<T> row);

/// Zero-padded cross-correlation. weight: (c_out, c_in, k, k); bias: (1, 1, 1, c_out).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, std::optional<Var<T>> bias, std::size_t stride,
              std::size_t pad);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
  std::size_t count = 0;
};

/// Per-channel normalization with batch statistics; gamma/beta: (1, 1, 1, c).
template <typename T>
Var<T> batch_norm_train(Var<T> x, Var<T> gamma, Var<T> beta, double eps, BatchStats* stats);

/// Per-channel affine normalization with fixed statistics.
template <typename T>
Var<T> batch_norm_infer(Var<T> x, Var<T> gamma, Var<T> beta, std::span<const T> mean,
                        std::span<const T> var, double eps);

/// Normalizes every row over its w entries; gamma/beta: (1, 1, 1, w).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps);

template <typename T>
Var<T> silu(Var<T> x);
/// Tanh approximation.
template <typename T>
Var<T> gelu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);

/// Bilinear x2 with half-pixel centers: src = (dst + 0.5) / 2 - 0.5, clamped
/// to [0, extent - 1].
template <typename T>
Var<T> upsample_bilinear_x2(Var<T> x);

/// softmax(Q K^T / sqrt(d_head)) V per head, heads concatenated along columns.
/// q: (n, 1, Tq, d); k, v: (n, 1, Tkv, d).
template <typename T>
Var<T> attention_core(Var<T> q, Var<T> k, Var<T> v, std::size_t n_heads);

/// (n, c, h, w) -> (n, 1, h*w, c), tokens in row-major scan order.
template <typename T>
Var<T> to_tokens(Var<T> x);
/// (n, 1, h*w, c) -> (n, c, h, w).
template <typename T>
Var<T> from_tokens(Var<T> x, std::size_t h, std::size_t w);

/// Concatenates (n, 1, T_i, d) token matrices along T.
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);

/// Repeats a (1, c, h, w) tensor n times along the batch axis.
template <typename T>
Var<T> broadcast_batch(Var<T> x, std::size_t n);

/// Picks rows of batch element `batch` from a (n, 1, T, d) tensor -> (1, 1, k, d).
template <typename T>
Var<T> gather_rows(Var<T> x, std::size_t batch, std::span<const std::size_t> rows);

/// Sum of sigmoid focal losses over all logits against constant targets.
template <typename T>
Var<T> sigmoid_focal_loss(Var<T> logits, const Tensor<T>& targets, double alpha, double gamma);

/// Sum over rows of (1 - GIoU) between predicted cxcywh rows (1, 1, k, 4) and
/// constant targets of the same shape.
template <typename T>
Var<T> giou_loss(Var<T> boxes, const Tensor<T>& targets);

}  // namespace tinyformer
