#include "tinyformer/head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tinyformer/vit.hpp"

namespace tinyformer {

void HeadConfig::validate() const {
  if (n_queries == 0) throw std::invalid_argument("head: need at least one query");
  if (num_classes == 0) throw std::invalid_argument("head: need at least one class");
  if (n_layers == 0) throw std::invalid_argument("head: need at least one decoder layer");
  if (d_dec == 0 || d_dec % 4 != 0) throw std::invalid_argument("head: d_dec must be a positive multiple of 4");
  if (n_heads == 0 || d_dec % n_heads != 0) throw std::invalid_argument("head: d_dec not divisible by n_heads");
}

template <typename T>
Var<T> DecoderLayer<T>::operator()(Context<T>& ctx, Var<T> q, Var<T> memory) const {
  auto h = ln_self(ctx, q);
  q = add(q, self_attn(ctx, h, h));
  q = add(q, cross_attn(ctx, ln_cross(ctx, q), memory));
  return add(q, mlp(ctx, ln_mlp(ctx, q)));
}

namespace {

template <typename T>
Tensor<T> trunc_normal(Shape s, double std, std::uint64_t seed) {
  Tensor<T> t(s);
  Rng rng(seed);
  for (auto& x : t.data()) x = static_cast<T>(std * rng.truncated_normal());
  return t;
}

// Query embeddings start at unit scale. At 0.02 they vanish against the
// shared cross-attention output and every query predicts the same box.
constexpr double kQueryStd = 1.0;

}  // namespace

template <typename T>
Decoder<T>::Decoder(ParamStore<T>& store, const std::string& name, const HeadConfig& cfg,
                    const std::vector<int>& levels, std::size_t in_width, std::uint64_t seed)
    : cfg_(cfg), levels_(levels), in_width_(in_width) {
  cfg.validate();
  if (levels.empty()) throw std::invalid_argument("decoder: no input levels");
  const std::size_t d = cfg.d_dec;
  for (int level : levels) {
    const std::string p = name + ".level" + std::to_string(level);
    in_proj_.emplace_back(store, p + ".proj", in_width, d, seed);
    level_embed_.push_back(&store.add(p + ".embed", trunc_normal<T>(Shape{1, 1, 1, d}, 0.02, derive_seed(seed, p + ".embed"))));
  }
  queries_ = &store.add(name + ".queries",
                        trunc_normal<T>(Shape{1, 1, cfg.n_queries, d}, kQueryStd, derive_seed(seed, name + ".queries")));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = name + ".layer" + std::to_string(l);
    layers_.push_back(DecoderLayer<T>{
        LayerNorm<T>(store, p + ".ln_self", d), LayerNorm<T>(store, p + ".ln_cross", d),
        LayerNorm<T>(store, p + ".ln_mlp", d), MultiHeadAttention<T>(store, p + ".self_attn", d, cfg.n_heads, seed),
        MultiHeadAttention<T>(store, p + ".cross_attn", d, cfg.n_heads, seed),
        Mlp<T>(store, p + ".mlp", d, cfg.mlp_ratio, Activation::GELU, seed)});
  }
  final_ln_ = LayerNorm<T>(store, name + ".final_ln", d);
  cls_head_ = Linear<T>(store, name + ".cls", d, cfg.num_classes, seed);
  // Focal-loss prior: every class starts at probability 0.01.
  for (auto& b : cls_head_.bias()->data()) b = static_cast<T>(-std::log(99.0));
  box_head_[0] = Linear<T>(store, name + ".box0", d, d, seed);
  box_head_[1] = Linear<T>(store, name + ".box1", d, d, seed);
  box_head_[2] = Linear<T>(store, name + ".box2", d, 4, seed);
}

template <typename T>
Var<T> Decoder<T>::memory(Context<T>& ctx, const FeaturePyramid<T>& pyr) const {
  std::vector<Var<T>> parts;
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const int level = levels_[i];
    const Var<T> fmap = pyr.at(level);
    const Shape s = fmap.shape();
    if (s.c != in_width_) {
      throw std::invalid_argument("decoder: level " + std::to_string(level) + " has width " + std::to_string(s.c) +
                                  ", expected " + std::to_string(in_width_));
    }
    auto tokens = add_row(in_proj_[i](ctx, to_tokens(fmap)), ctx.tape.leaf(*level_embed_[i]));
    // Positions share one frame across levels: coordinates in stride-16 cells.
    const double unit = static_cast<double>(1 << level) / 16.0;
    auto pos = ctx.tape.constant(sincos_positions<T>(s.h, s.w, cfg_.d_dec, unit));
    parts.push_back(add(tokens, broadcast_batch(pos, s.n)));
  }
  return parts.size() == 1 ? parts[0] : concat_rows<T>(parts);
}

template <typename T>
HeadOutput<T> Decoder<T>::operator()(Context<T>& ctx, const FeaturePyramid<T>& pyr) const {
  auto mem = memory(ctx, pyr);
  auto q = broadcast_batch(ctx.tape.leaf(*queries_), mem.shape().n);
  for (const auto& layer : layers_) q = layer(ctx, q, mem);
  auto h = final_ln_(ctx, q);
  auto logits = cls_head_(ctx, h);
  auto b = silu(box_head_[0](ctx, h));
  b = silu(box_head_[1](ctx, b));
  return {logits, sigmoid(box_head_[2](ctx, b))};
}

std::vector<double> build_cost_matrix(std::span<const double> probs, std::span<const double> boxes,
                                      std::size_t num_classes, const std::vector<GtObject>& gts,
                                      const MatchWeights& w) {
  if (num_classes == 0 || probs.size() % num_classes != 0) throw std::invalid_argument("cost: bad class count");
  const std::size_t q = probs.size() / num_classes;
  if (boxes.size() != 4 * q) throw std::invalid_argument("cost: boxes/probs query count mismatch");
  for (const auto& g : gts) {
    validate_box(g.box);
    if (g.class_id >= num_classes) throw std::invalid_argument("cost: class id out of range");
  }
  std::vector<double> cost(q * gts.size());
  for (std::size_t i = 0; i < q; ++i) {
    const Box p{boxes[4 * i], boxes[4 * i + 1], boxes[4 * i + 2], boxes[4 * i + 3]};
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const Box& g = gts[j].box;
      const double l1 = std::abs(p.cx - g.cx) + std::abs(p.cy - g.cy) + std::abs(p.w - g.w) + std::abs(p.h - g.h);
      std::array<double, 4> unused{};
      const double gi = giou_and_grad(p, g, unused);
      cost[i * gts.size() + j] = -w.cls * probs[i * num_classes + gts[j].class_id] + w.l1 * l1 + w.giou * (1.0 - gi);
    }
  }
  return cost;
}

MatchAssignment hungarian_match(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (cost.size() != rows * cols) throw std::invalid_argument("hungarian: cost size mismatch");
  for (double c : cost)
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost entry");
  MatchAssignment out;
  if (rows == 0 || cols == 0) return out;

  // Shortest augmenting paths with potentials (Kuhn-Munkres, O(n^2 m)).
  // The smaller side is the "left" side; every left vertex gets assigned.
  const bool by_row = rows <= cols;
  const std::size_t left = by_row ? rows : cols, right = by_row ? cols : rows;
  auto c = [&](std::size_t i, std::size_t j) {  // 1-based
    return by_row ? cost[(i - 1) * cols + (j - 1)] : cost[(j - 1) * cols + (i - 1)];
  };

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(left + 1, 0.0), v(right + 1, 0.0);
  std::vector<std::size_t> p(right + 1, 0), way(right + 1, 0);
  for (std::size_t i = 1; i <= left; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(right + 1, inf);
    std::vector<char> used(right + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= right; ++j) {
        if (used[j]) continue;
        const double cur = c(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= right; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  for (std::size_t j = 1; j <= right; ++j) {
    if (p[j] == 0) continue;
    const std::size_t row = by_row ? p[j] - 1 : j - 1, col = by_row ? j - 1 : p[j] - 1;
    out.pairs.emplace_back(row, col);
    out.total_cost += cost[row * cols + col];
  }
  std::sort(out.pairs.begin(), out.pairs.end(),
            [](const auto& x, const auto& y) { return x.second != y.second ? x.second < y.second : x.first < y.first; });
  return out;
}

namespace {

template <typename T>
std::vector<double> probs_of(const HeadOutput<T>& out, std::size_t b) {
  const Shape s = out.logits.shape();
  const std::size_t per = s.h * s.w;
  std::vector<double> p(per);
  const auto& lv = out.logits.value();
  for (std::size_t i = 0; i < per; ++i) p[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(lv[b * per + i])));
  return p;
}

template <typename T>
std::vector<double> boxes_of(const HeadOutput<T>& out, std::size_t b) {
  const Shape s = out.boxes.shape();
  const std::size_t per = s.h * 4;
  const auto bv = out.boxes.value().data().subspan(b * per, per);
  return std::vector<double>(bv.begin(), bv.end());
}

}  // namespace

template <typename T>
std::vector<MatchAssignment> match_batch(const HeadOutput<T>& out, const std::vector<std::vector<GtObject>>& gts,
                                         const HeadConfig& cfg) {
  const Shape s = out.logits.shape();
  if (gts.size() != s.n) throw std::invalid_argument("match: batch size mismatch");
  std::vector<MatchAssignment> res;
  for (std::size_t b = 0; b < s.n; ++b) {
    auto cost = build_cost_matrix(probs_of(out, b), boxes_of(out, b), s.w, gts[b], cfg.cost);
    res.push_back(hungarian_match(cost, s.h, gts[b].size()));
  }
  return res;
}

template <typename T>
SetLoss<T> set_loss(const HeadOutput<T>& out, const std::vector<std::vector<GtObject>>& gts,
                    const std::vector<MatchAssignment>& matches, const HeadConfig& cfg) {
  const Shape s = out.logits.shape();
  if (gts.size() != s.n || matches.size() != s.n) throw std::invalid_argument("set_loss: batch size mismatch");
  Tape<T>& tape = *out.logits.tape;
  std::size_t n_gt = 0;
  for (const auto& g : gts) n_gt += g.size();
  const double norm = std::max<double>(1.0, static_cast<double>(n_gt));

  Tensor<T> targets(s);
  std::vector<Var<T>> matched;
  std::vector<T> target_boxes;
  for (std::size_t b = 0; b < s.n; ++b) {
    std::vector<std::size_t> rows;
    for (const auto& [q, g] : matches[b].pairs) {
      if (q >= s.h || g >= gts[b].size()) throw std::invalid_argument("set_loss: assignment out of range");
      const GtObject& obj = gts[b][g];
      targets[(b * s.h + q) * s.w + obj.class_id] = T(1);
      rows.push_back(q);
      for (double v : {obj.box.cx, obj.box.cy, obj.box.w, obj.box.h}) target_boxes.push_back(static_cast<T>(v));
    }
    if (!rows.empty()) matched.push_back(gather_rows<T>(out.boxes, b, rows));
  }

  SetLoss<T> loss;
  loss.cls = scale(sigmoid_focal_loss(out.logits, targets, cfg.focal_alpha, cfg.focal_gamma), 1.0 / norm);
  if (matched.empty()) {
    loss.l1 = loss.giou = tape.constant(Tensor<T>(Shape{1, 1, 1, 1}));
  } else {
    auto pred = matched.size() == 1 ? matched[0] : concat_rows<T>(matched);
    Tensor<T> tb(pred.shape(), std::move(target_boxes));
    loss.l1 = scale(sum(abs(sub(pred, tape.constant(tb)))), 1.0 / norm);
    loss.giou = scale(giou_loss(pred, tb), 1.0 / norm);
  }
  loss.total = add(add(scale(loss.cls, cfg.loss.cls), scale(loss.l1, cfg.loss.l1)), scale(loss.giou, cfg.loss.giou));
  return loss;
}

template <typename T>
std::vector<Detection> postprocess_topk(const HeadOutput<T>& out, std::size_t batch, std::size_t k) {
  const Shape s = out.logits.shape();
  if (batch >= s.n) throw std::invalid_argument("postprocess: batch index out of range");
  const auto probs = probs_of(out, batch);
  const auto boxes = boxes_of(out, batch);
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return probs[a] != probs[b] ? probs[a] > probs[b] : a < b; });
  std::vector<Detection> dets;
  dets.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t q = order[i] / s.w;
    dets.push_back({order[i] % s.w, probs[order[i]], Box{boxes[4 * q], boxes[4 * q + 1], boxes[4 * q + 2], boxes[4 * q + 3]}});
  }
  return dets;
}

template struct DecoderLayer<float>;
template struct DecoderLayer<double>;
template class Decoder<float>;
template class Decoder<double>;
template std::vector<MatchAssignment> match_batch(const HeadOutput<float>&, const std::vector<std::vector<GtObject>>&,
                                                  const HeadConfig&);
template std::vector<MatchAssignment> match_batch(const HeadOutput<double>&, const std::vector<std::vector<GtObject>>&,
                                                  const HeadConfig&);
template SetLoss<float> set_loss(const HeadOutput<float>&, const std::vector<std::vector<GtObject>>&,
                                 const std::vector<MatchAssignment>&, const HeadConfig&);
template SetLoss<double> set_loss(const HeadOutput<double>&, const std::vector<std::vector<GtObject>>&,
                                  const std::vector<MatchAssignment>&, const HeadConfig&);
template std::vector<Detection> postprocess_topk(const HeadOutput<float>&, std::size_t, std::size_t);
template std::vector<Detection> postprocess_topk(const HeadOutput<double>&, std::size_t, std::size_t);

}  // namespace tinyformer
