#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinyformer/box.hpp"
#include "tinyformer/ssa.hpp"

namespace tinyformer {

struct GtObject {
  std::size_t class_id = 0;
  Box box;
};

struct Detection {
  std::size_t class_id = 0;
  double score = 0.0;
  Box box;
};

struct MatchWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
};

struct HeadConfig {
  std::size_t n_queries = 10;
  std::size_t d_dec = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t num_classes = 3;
  std::size_t mlp_ratio = 4;
  MatchWeights cost;
  MatchWeights loss;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const;
};

template <typename T>
struct DecoderLayer {
  LayerNorm<T> ln_self, ln_cross, ln_mlp;
  MultiHeadAttention<T> self_attn, cross_attn;
  Mlp<T> mlp;

  Var<T> operator()(Context<T>& ctx, Var<T> queries, Var<T> memory) const;
};

/// logits: (n, 1, Q, K); boxes: (n, 1, Q, 4) as sigmoid cxcywh.
template <typename T>
struct HeadOutput {
  Var<T> logits;
  Var<T> boxes;
};

/// Learned queries attending over the flattened pyramid tokens.
template <typename T>
class Decoder {
 public:
  Decoder() = default;
  /// levels/widths: the pyramid levels consumed and their channel widths.
  Decoder(ParamStore<T>& store, const std::string& name, const HeadConfig& cfg, const std::vector<int>& levels,
          std::size_t in_width, std::uint64_t seed);

  /// Memory tokens: per-level projection + level embedding + sin/cos positions.
  Var<T> memory(Context<T>& ctx, const FeaturePyramid<T>& pyr) const;
  HeadOutput<T> operator()(Context<T>& ctx, const FeaturePyramid<T>& pyr) const;

  const HeadConfig& config() const { return cfg_; }
  const std::vector<DecoderLayer<T>>& layers() const { return layers_; }
  const std::vector<int>& levels() const { return levels_; }

 private:
  HeadConfig cfg_;
  std::vector<int> levels_;
  std::size_t in_width_ = 0;
  std::vector<Linear<T>> in_proj_;
  std::vector<Tensor<T>*> level_embed_;
  Tensor<T>* queries_ = nullptr;
  std::vector<DecoderLayer<T>> layers_;
  LayerNorm<T> final_ln_;
  Linear<T> cls_head_;
  std::array<Linear<T>, 3> box_head_;
};

/// Row-major (n_queries x n_gt) matching cost for one image.
/// probs: sigmoid class scores (Q x K, row-major); boxes: Q x 4 cxcywh.
std::vector<double> build_cost_matrix(std::span<const double> probs, std::span<const double> boxes,
                                      std::size_t num_classes, const std::vector<GtObject>& gts,
                                      const MatchWeights& w);

struct MatchAssignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, gt), sorted by gt
  double total_cost = 0.0;
};

/// Minimum-cost injective assignment for a rows x cols cost matrix
/// (rows = queries, cols = ground truths); min(rows, cols) pairs.
MatchAssignment hungarian_match(std::span<const double> cost, std::size_t rows, std::size_t cols);

template <typename T>
struct SetLoss {
  Var<T> total, cls, l1, giou;
};

/// Focal loss on all logits (matched (query, class) targets 1, rest 0) plus
/// L1 and 1 - GIoU on matched boxes; every term is divided by max(1, #gt).
template <typename T>
SetLoss<T> set_loss(const HeadOutput<T>& out, const std::vector<std::vector<GtObject>>& gts,
                    const std::vector<MatchAssignment>& matches, const HeadConfig& cfg);

/// Matches every image in the batch against its ground truth.
template <typename T>
std::vector<MatchAssignment> match_batch(const HeadOutput<T>& out, const std::vector<std::vector<GtObject>>& gts,
                                         const HeadConfig& cfg);

/// Score top-k over (query, class) pairs of image `batch`, no suppression.
/// Ties break by query, then class, ascending.
template <typename T>
std::vector<Detection> postprocess_topk(const HeadOutput<T>& out, std::size_t batch, std::size_t k);

}  // namespace tinyformer
