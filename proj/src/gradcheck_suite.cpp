#include <algorithm>
#include <map>

#include "tinyformer/gradcheck.hpp"
#include "tinyformer/head.hpp"
#include "tinyformer/layers.hpp"
#include "tinyformer/neck.hpp"
#include "tinyformer/ssa.hpp"

namespace tinyformer {

namespace {

using TD = Tensor<double>;
using VD = Var<double>;

TD random(Shape s, std::uint64_t seed, double scale = 1.0) { return TD::create(s, Normal{seed, 0.0, scale}); }

// Random projection keeps the loss O(1) while exercising every output.
VD project(VD y, std::uint64_t seed) { return weighted_sum(y, TD::create(y.shape(), Normal{seed, 0.0, 1.0})); }

class Suite {
 public:
  Suite(const GradSuiteOptions& opt, const std::function<void(const GradSuiteEntry&)>& cb) : opt_(opt), cb_(cb) {}

  void check(const std::string& name, const std::vector<TD*>& inputs, const LossBuilder& build,
             std::size_t per_tensor) {
    auto r = grad_check(name, inputs, build, {.max_per_tensor = per_tensor, .sample_seed = probe_seed_++});
    auto [it, fresh] = index_.try_emplace(name, entries_.size());
    if (fresh) entries_.push_back({name, 0, 0, {}});
    auto& e = entries_[it->second];
    ++e.trials;
    if (!r.passed(opt_.tolerance)) ++e.failures;
    if (e.trials == 1 || r.max_rel_error > e.worst.max_rel_error) e.worst = r;
  }

  std::vector<GradSuiteEntry> finish() {
    if (cb_) {
      for (const auto& e : entries_) cb_(e);
    }
    return entries_;
  }

 private:
  GradSuiteOptions opt_;
  std::function<void(const GradSuiteEntry&)> cb_;
  std::vector<GradSuiteEntry> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t probe_seed_ = 1;
};

// Every trainable tensor of a block, with norms nudged off their identity init.
std::vector<TD*> trainables(ParamStore<double>& store, Rng& rng) {
  std::vector<TD*> out;
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    for (auto& v : e.value.data()) v += 0.1 * rng.normal();
    out.push_back(&e.value);
  }
  return out;
}

void primitives(Suite& s, Rng& rng, int trial) {
  constexpr std::size_t kProbe = 40;
  const Shape sh{1 + rng.below(2), 1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6)};
  auto a = random(sh, rng.next());
  auto b = random(sh, rng.next());
  const std::uint64_t p = rng.next();
  s.check("add", {&a, &b}, [&](Tape<double>& t) { return project(add(t.leaf(a), t.leaf(b)), p); }, kProbe);
  s.check("sub", {&a, &b}, [&](Tape<double>& t) { return project(sub(t.leaf(a), t.leaf(b)), p); }, kProbe);
  s.check("mul", {&a, &b}, [&](Tape<double>& t) { return project(mul(t.leaf(a), t.leaf(b)), p); }, kProbe);
  s.check("scale", {&a}, [&](Tape<double>& t) { return project(scale(t.leaf(a), -1.7), p); }, kProbe);
  s.check("sum", {&a}, [&](Tape<double>& t) { return sum(mul(t.leaf(a), t.leaf(a))); }, kProbe);
  s.check("abs", {&a}, [&](Tape<double>& t) { return project(abs(t.leaf(a)), p); }, kProbe);
  s.check("silu", {&a}, [&](Tape<double>& t) { return project(silu(t.leaf(a)), p); }, kProbe);
  s.check("gelu", {&a}, [&](Tape<double>& t) { return project(gelu(t.leaf(a)), p); }, kProbe);
  s.check("sigmoid", {&a}, [&](Tape<double>& t) { return project(sigmoid(t.leaf(a)), p); }, kProbe);
  s.check("upsample_bilinear_x2", {&a}, [&](Tape<double>& t) { return project(upsample_bilinear_x2(t.leaf(a)), p); },
          kProbe);
  s.check("to_tokens", {&a}, [&](Tape<double>& t) { return project(to_tokens(t.leaf(a)), p); }, kProbe);

  auto c2 = random({sh.n, 1 + rng.below(3), sh.h, sh.w}, rng.next());
  s.check("concat_channels", {&a, &c2}, [&](Tape<double>& t) {
    const VD parts[] = {t.leaf(a), t.leaf(c2)};
    return project(concat_channels<double>(parts), p);
  }, kProbe);
  auto wide = random({sh.n, sh.c + 2, sh.h, sh.w}, rng.next());
  s.check("slice_channels", {&wide}, [&](Tape<double>& t) { return project(slice_channels(t.leaf(wide), 1, sh.c), p); },
          kProbe);
  s.check("split_channels", {&wide}, [&](Tape<double>& t) {
    const std::size_t sizes[] = {2, sh.c};
    auto parts = split_channels(t.leaf(wide), sizes);
    return add(project(parts[0], p), project(parts[1], p + 1));
  }, kProbe);

  const std::size_t k = trial % 2 == 0 ? 1 : 3, stride = (trial / 2) % 2 + 1;
  auto x = random({sh.n, sh.c, 2 * sh.h + 1, 2 * sh.w + 1}, rng.next());
  auto w = random({1 + rng.below(4), sh.c, k, k}, rng.next());
  auto bias = random({1, 1, 1, w.shape().n}, rng.next());
  s.check("conv2d", {&x, &w, &bias}, [&](Tape<double>& t) {
    return project(conv2d<double>(t.leaf(x), t.leaf(w), t.leaf(bias), stride, k / 2), p);
  }, kProbe);

  auto gamma = random({1, 1, 1, sh.c}, rng.next());
  auto beta = random({1, 1, 1, sh.c}, rng.next());
  auto bx = random({sh.n, sh.c, sh.h + 1, sh.w + 1}, rng.next());
  s.check("batch_norm_train", {&bx, &gamma, &beta}, [&](Tape<double>& t) {
    return project(batch_norm_train<double>(t.leaf(bx), t.leaf(gamma), t.leaf(beta), 1e-5, nullptr), p);
  }, kProbe);
  std::vector<double> mu(sh.c, 0.2), var(sh.c, 1.5);
  s.check("batch_norm_infer", {&a, &gamma, &beta}, [&](Tape<double>& t) {
    return project(batch_norm_infer<double>(t.leaf(a), t.leaf(gamma), t.leaf(beta), mu, var, 1e-5), p);
  }, kProbe);

  auto rowx = random({sh.n, 1, sh.h, sh.w + 1}, rng.next());
  auto lg = random({1, 1, 1, sh.w + 1}, rng.next());
  auto lb = random({1, 1, 1, sh.w + 1}, rng.next());
  s.check("layer_norm", {&rowx, &lg, &lb}, [&](Tape<double>& t) {
    return project(layer_norm<double>(t.leaf(rowx), t.leaf(lg), t.leaf(lb), 1e-6), p);
  }, kProbe);
  auto lw = random({1, 1, sh.w + 1, 3}, rng.next());
  auto lbias = random({1, 1, 1, 3}, rng.next());
  s.check("linear", {&rowx, &lw, &lbias}, [&](Tape<double>& t) {
    return project(linear<double>(t.leaf(rowx), t.leaf(lw), t.leaf(lbias)), p);
  }, kProbe);
  s.check("add_row", {&rowx, &lg}, [&](Tape<double>& t) { return project(add_row(t.leaf(rowx), t.leaf(lg)), p); },
          kProbe);

  auto ma = random({1, 1, sh.h, sh.w}, rng.next());
  auto mb = random({1, 1, sh.w, sh.c + 1}, rng.next());
  s.check("matmul2d", {&ma, &mb}, [&](Tape<double>& t) { return project(matmul2d(t.leaf(ma), t.leaf(mb)), p); },
          kProbe);

  const std::size_t heads = 2, d = 2 * (1 + rng.below(3));
  auto q = random({sh.n, 1, 1 + rng.below(5), d}, rng.next());
  auto kk = random({sh.n, 1, 1 + rng.below(5), d}, rng.next());
  auto vv = random(kk.shape(), rng.next());
  s.check("attention_core", {&q, &kk, &vv}, [&](Tape<double>& t) {
    return project(attention_core<double>(t.leaf(q), t.leaf(kk), t.leaf(vv), heads), p);
  }, kProbe);

  auto tok = random({sh.n, 1, sh.h * sh.w, sh.c}, rng.next());
  s.check("from_tokens", {&tok}, [&](Tape<double>& t) { return project(from_tokens(t.leaf(tok), sh.h, sh.w), p); },
          kProbe);
  s.check("concat_rows", {&q, &kk}, [&](Tape<double>& t) {
    const VD parts[] = {t.leaf(q), t.leaf(kk)};
    return project(concat_rows<double>(parts), p);
  }, kProbe);
  auto one = random({1, sh.c, sh.h, sh.w}, rng.next());
  s.check("broadcast_batch", {&one}, [&](Tape<double>& t) { return project(broadcast_batch(t.leaf(one), 3), p); },
          kProbe);
  const std::size_t rows[] = {0, q.shape().h - 1, 0};
  s.check("gather_rows", {&q}, [&](Tape<double>& t) { return project(gather_rows<double>(t.leaf(q), 0, rows), p); },
          kProbe);

  TD targets(sh);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = static_cast<double>(rng.below(2));
  s.check("sigmoid_focal_loss", {&a},
          [&](Tape<double>& t) { return sigmoid_focal_loss(t.leaf(a), targets, 0.25, 2.0); }, kProbe);

  const std::size_t nb = 1 + rng.below(4);
  TD pred({1, 1, nb, 4}), gt({1, 1, nb, 4});
  for (std::size_t r = 0; r < nb; ++r) {
    for (TD* bx4 : {&pred, &gt}) {
      (*bx4)[r * 4 + 0] = rng.uniform(0.3, 0.7);
      (*bx4)[r * 4 + 1] = rng.uniform(0.3, 0.7);
      (*bx4)[r * 4 + 2] = rng.uniform(0.05, 0.5);
      (*bx4)[r * 4 + 3] = rng.uniform(0.05, 0.5);
    }
  }
  s.check("giou_loss", {&pred}, [&](Tape<double>& t) { return giou_loss(t.leaf(pred), gt); }, kProbe);
}

void composites(Suite& s, Rng& rng, int trial) {
  constexpr std::size_t kProbe = 12;
  const std::uint64_t seed = rng.next(), p = rng.next();

  {
    ParamStore<double> store;
    const std::size_t k = trial % 2 == 0 ? 3 : 1, stride = trial % 3 == 0 ? 2 : 1;
    ConvBlock<double> blk(store, "blk", 3, 4, k, stride, seed);
    auto x = random({2, 3, 6, 6}, rng.next());
    auto in = trainables(store, rng);
    in.push_back(&x);
    s.check("conv_block", in, [&](Tape<double>& t) {
      Context<double> ctx{t, true};
      return project(blk(ctx, t.leaf(x)), p);
    }, kProbe);
  }
  {
    ParamStore<double> store;
    FusionBlock<double> blk(store, "fb", 4, 4, 8, seed);
    auto a = random({2, 4, 4, 4}, rng.next()), b = random({2, 4, 4, 4}, rng.next());
    auto in = trainables(store, rng);
    in.push_back(&a);
    in.push_back(&b);
    s.check("fusion_block", in, [&](Tape<double>& t) {
      Context<double> ctx{t, true};
      return project(blk(ctx, t.leaf(a), t.leaf(b)), p);
    }, kProbe);
  }
  {
    ParamStore<double> store;
    const auto mode = trial % 2 == 0 ? FusionMode::AddDeepConcatShallow : FusionMode::AddShallowConcatDeep;
    BiFusion<double> blk(store, "bif", 8, mode, seed);
    auto prev = random({2, 8, 8, 8}, rng.next()), cur = random({2, 8, 4, 4}, rng.next()),
         next = random({2, 8, 2, 2}, rng.next());
    auto in = trainables(store, rng);
    for (TD* t : {&prev, &cur, &next}) in.push_back(t);
    s.check("bifusion", in, [&](Tape<double>& t) {
      Context<double> ctx{t, true};
      return project(blk(ctx, t.leaf(prev), t.leaf(cur), t.leaf(next)), p);
    }, kProbe);
  }
  {
    // Cycles through every adapter variant plus the adapter-off pyramid.
    constexpr SsaVariant variants[] = {SsaVariant::Proposed,      SsaVariant::UpToF4,        SsaVariant::UpToF5,
                                       SsaVariant::F2F3F5,        SsaVariant::BottleneckSPB, SsaVariant::EarlyF2Fusion,
                                       SsaVariant::F3Only};
    SsaConfig cfg;
    cfg.base_channels = 4;
    cfg.d_back = 8;
    cfg.d_neck = 8;
    const std::size_t pick = static_cast<std::size_t>(trial) % 8;
    cfg.enabled = pick < 7;
    cfg.variant = cfg.enabled ? variants[pick] : SsaVariant::Proposed;
    cfg.surrogate_f2 = !cfg.enabled;
    ParamStore<double> store;
    SpatialSemanticAdapter<double> ssa(store, "ssa", cfg, seed);
    auto image = random({2, 3, 64, 64}, rng.next());
    std::array<TD, 3> taps{random({2, 8, 4, 4}, rng.next()), random({2, 8, 4, 4}, rng.next()),
                           random({2, 8, 4, 4}, rng.next())};
    auto in = trainables(store, rng);
    in.push_back(&image);
    for (auto& t : taps) in.push_back(&t);
    s.check("ssa_pyramid", in, [&](Tape<double>& t) {
      Context<double> ctx{t, true};
      auto pyr = ssa(ctx, t.leaf(image), {t.leaf(taps[0]), t.leaf(taps[1]), t.leaf(taps[2])});
      VD loss = project(pyr.at(3), p);
      for (int level : pyr.indices()) {
        if (level != 3) loss = add(loss, project(pyr.at(level), p + static_cast<std::uint64_t>(level)));
      }
      return loss;
    }, kProbe);
  }
  {
    ParamStore<double> store;
    const std::size_t d = 8;
    DecoderLayer<double> layer{LayerNorm<double>(store, "l.ln_self", d), LayerNorm<double>(store, "l.ln_cross", d),
                               LayerNorm<double>(store, "l.ln_mlp", d),
                               MultiHeadAttention<double>(store, "l.self_attn", d, 2, seed),
                               MultiHeadAttention<double>(store, "l.cross_attn", d, 2, seed),
                               Mlp<double>(store, "l.mlp", d, 4, Activation::GELU, seed)};
    auto q = random({2, 1, 5, d}, rng.next()), mem = random({2, 1, 12, d}, rng.next());
    auto in = trainables(store, rng);
    in.push_back(&q);
    in.push_back(&mem);
    s.check("decoder_layer", in, [&](Tape<double>& t) {
      Context<double> ctx{t, true};
      return project(layer(ctx, t.leaf(q), t.leaf(mem)), p);
    }, kProbe);
  }
  {
    HeadConfig cfg;
    cfg.n_queries = 5;
    cfg.num_classes = 3;
    auto logits = random({2, 1, 5, 3}, rng.next()), raw = random({2, 1, 5, 4}, rng.next(), 0.7);
    std::vector<std::vector<GtObject>> gts(2);
    for (auto& img : gts) {
      const std::size_t n = rng.below(4);
      for (std::size_t i = 0; i < n; ++i) {
        img.push_back({static_cast<std::size_t>(rng.below(3)),
                       Box{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)}});
      }
    }
    s.check("set_loss", {&logits, &raw}, [&](Tape<double>& t) {
      HeadOutput<double> out{t.leaf(logits), sigmoid(t.leaf(raw))};
      return set_loss(out, gts, match_batch(out, gts, cfg), cfg).total;
    }, 0);
  }
}

}  // namespace

std::vector<GradSuiteEntry> run_gradcheck_suite(const GradSuiteOptions& options,
                                                const std::function<void(const GradSuiteEntry&)>& on_entry) {
  Suite suite(options, on_entry);
  Rng rng(options.seed);
  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    primitives(suite, rng, static_cast<int>(trial));
    composites(suite, rng, static_cast<int>(trial));
  }
  return suite.finish();
}

}  // namespace tinyformer
