#include "doctest.h"
#include "support.hpp"
#include "tinyformer/flops.hpp"
#include "tinyformer/neck.hpp"

using namespace tinyformer;
using namespace tinyformer::testing;

namespace {

constexpr std::size_t kD = 8, kF2 = 6;

NeckConfig neck_cfg(NeckMode mode, std::size_t n_bif = 2, FusionMode fm = FusionMode::AddDeepConcatShallow) {
  NeckConfig c;
  c.mode = mode;
  c.d_neck = kD;
  c.n_bifusion = n_bif;
  c.fusion_mode = fm;
  c.f2_width = kF2;
  return c;
}

// Input pyramid for an h x w image.
struct Levels {
  std::map<int, Tensor<double>> t;
  Levels(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
    for (int level : {2, 3, 4, 5}) t[level] = random_tensor({n, level == 2 ? kF2 : kD, h >> level, w >> level}, seed + level);
  }
  FeaturePyramid<double> vars(Tape<double>& tape) {
    FeaturePyramid<double> p;
    for (auto& [level, tensor] : t) p.levels[level] = tape.leaf(tensor);
    return p;
  }
};

FeaturePyramid<double> run(const Neck<double>& neck, Levels& in) {
  static Tape<double> tape;
  Context<double> ctx{tape, false};
  return neck(ctx, in.vars(tape));
}

}  // namespace

TEST_CASE("fusion block merges two 96-channel maps into d=192") {
  ParamStore<double> store;
  FusionBlock<double> fb(store, "fb", 96, 96, 192, 1);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  auto y = fb(ctx, tape.constant(random_tensor({1, 96, 8, 8}, 1)), tape.constant(random_tensor({1, 96, 8, 8}, 2)));
  CHECK(y.shape() == Shape{1, 192, 8, 8});
  auto z = fb(ctx, tape.constant(Tensor<double>({1, 96, 8, 8})), tape.constant(Tensor<double>({1, 96, 8, 8})));
  for (double v : z.value().data()) REQUIRE(v == 0.0);
  CHECK_THROWS_AS(FusionBlock<double>(store, "bad", 4, 4, 12, 1), std::invalid_argument);
}

TEST_CASE("proposed and swapped fusion modes differ under tied weights") {
  ParamStore<double> s1, s2;
  Neck<double> prop(s1, "neck", neck_cfg(NeckMode::PBM, 2, FusionMode::AddDeepConcatShallow), 3);
  Neck<double> swap(s2, "neck", neck_cfg(NeckMode::PBM, 2, FusionMode::AddShallowConcatDeep), 3);
  Levels in(1, 64, 64, 4);
  auto a = run(prop, in), b = run(swap, in);
  for (int level : {3, 4, 5}) CHECK(linf(a.at(level).value(), b.at(level).value()) > 1e-6);
}

TEST_CASE("n_bifusion 0 reproduces the baseline neck bit-exactly") {
  ParamStore<double> s0, sb;
  Neck<double> zero(s0, "neck", neck_cfg(NeckMode::PBM, 0), 5);
  Neck<double> base(sb, "neck", neck_cfg(NeckMode::Baseline3Scale), 5);
  Levels in(2, 64, 32, 8);
  auto a = run(zero, in), b = run(base, in);
  CHECK(a.indices() == std::vector<int>{3, 4, 5});
  for (int level : {3, 4, 5}) CHECK(bit_equal(a.at(level).value(), b.at(level).value()));
}

TEST_CASE("n_bifusion 1 and 2 share level 3 and differ elsewhere") {
  ParamStore<double> s1, s2, s0;
  Neck<double> one(s1, "neck", neck_cfg(NeckMode::PBM, 1), 5);
  Neck<double> two(s2, "neck", neck_cfg(NeckMode::PBM, 2), 5);
  Neck<double> zero(s0, "neck", neck_cfg(NeckMode::PBM, 0), 5);
  Levels in(1, 64, 64, 8);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  auto a = one.top_down(ctx, in.vars(tape)), b = two.top_down(ctx, in.vars(tape));
  CHECK(bit_equal(a.at(3).value(), b.at(3).value()));
  CHECK(linf(a.at(4).value(), b.at(4).value()) > 1e-6);

  auto o1 = run(one, in), o2 = run(two, in), o0 = run(zero, in);
  for (int level : {3, 4, 5}) {
    CAPTURE(level);
    CHECK(linf(o0.at(level).value(), o1.at(level).value()) > 1e-6);
    CHECK(linf(o0.at(level).value(), o2.at(level).value()) > 1e-6);
    if (level != 3) CHECK(linf(o1.at(level).value(), o2.at(level).value()) > 1e-6);
  }
}

TEST_CASE("bi-fusion blocks do not depend on evaluation order") {
  ParamStore<double> store;
  Neck<double> neck(store, "neck", neck_cfg(NeckMode::PBM, 2), 11);
  Levels in(1, 64, 64, 12);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  auto p = in.vars(tape);
  auto ref = neck.top_down(ctx, p);
  // Level 4 first, then level 3.
  auto b4 = neck.bifusion(4)(ctx, p.at(3), p.at(4), p.at(5));
  auto b3 = neck.bifusion(3)(ctx, neck.f2_proj()(ctx, p.at(2)), p.at(3), p.at(4));
  CHECK(bit_equal(b4.value(), ref.at(4).value()));
  CHECK(bit_equal(b3.value(), ref.at(3).value()));
}

TEST_CASE("bi-fusion gradient routing") {
  ParamStore<double> store;
  Neck<double> neck(store, "neck", neck_cfg(NeckMode::PBM, 2), 13);
  Levels in(1, 64, 64, 20);
  auto grads = [&](int level) {
    for (auto& [l, t] : in.t) t.drop_grad();
    Tape<double> tape;
    Context<double> ctx{tape, false};
    auto out = neck.top_down(ctx, in.vars(tape));
    tape.backward(weighted_sum(out.at(level), random_tensor(out.at(level).shape(), 3)));
    std::map<int, double> n;
    for (auto& [l, t] : in.t) n[l] = t.has_grad() ? norm(t.grad()) : 0.0;
    return n;
  };
  auto g3 = grads(3);
  CHECK(g3[2] > 0.0);
  CHECK(g3[3] > 0.0);
  CHECK(g3[4] > 0.0);
  CHECK(g3[5] == 0.0);
  auto g4 = grads(4);
  CHECK(g4[2] == 0.0);
  CHECK(g4[3] > 0.0);
  CHECK(g4[4] > 0.0);
  CHECK(g4[5] > 0.0);
}

TEST_CASE("baseline neck: zero in, zero out; one live level reaches every output") {
  ParamStore<double> store;
  Neck<double> neck(store, "neck", neck_cfg(NeckMode::Baseline3Scale), 2);
  Levels zero(1, 64, 64, 1);
  for (auto& [l, t] : zero.t) std::fill(t.data().begin(), t.data().end(), 0.0);
  auto z = run(neck, zero);
  for (int level : {3, 4, 5})
    for (double v : z.at(level).value().data()) REQUIRE(v == 0.0);

  for (int live : {3, 5}) {
    Levels one = zero;
    one.t[live] = random_tensor(one.t[live].shape(), 40 + live);
    auto out = run(neck, one);
    for (int level : {3, 4, 5}) {
      CAPTURE(live);
      CAPTURE(level);
      CHECK(norm(out.at(level).value().data()) > 0.0);
    }
  }
}

TEST_CASE("both necks keep input strides at width d_neck") {
  for (NeckMode mode : {NeckMode::Baseline3Scale, NeckMode::PBM})
    for (std::size_t n_bif : {0, 1, 2}) {
      ParamStore<double> store;
      Neck<double> neck(store, "neck", neck_cfg(mode, n_bif), 1);
      for (std::size_t h : {32, 64, 96, 128})
        for (std::size_t w : {32, 64, 96, 128}) {
          Levels in(1, h, w, 3);
          auto out = run(neck, in);
          CHECK(out.indices() == std::vector<int>{3, 4, 5});
          for (int level : {3, 4, 5}) CHECK(out.at(level).shape() == Shape{1, kD, h >> level, w >> level});
        }
    }
}

TEST_CASE("emit_f2_tokens adds a projected stride-4 level") {
  ParamStore<double> store;
  NeckConfig cfg = neck_cfg(NeckMode::PBM, 2);
  cfg.emit_f2_tokens = true;
  Neck<double> neck(store, "neck", cfg, 1);
  Levels in(1, 64, 64, 3);
  auto out = run(neck, in);
  CHECK(out.at(2).shape() == Shape{1, kD, 16, 16});
}

TEST_CASE("width or level mismatches are rejected") {
  ParamStore<double> store;
  Neck<double> neck(store, "neck", neck_cfg(NeckMode::PBM, 2), 1);
  Levels in(1, 64, 64, 3);
  in.t[4] = random_tensor({1, kD + 1, 4, 4}, 1);
  CHECK_THROWS_AS(run(neck, in), std::invalid_argument);
  Levels no2(1, 64, 64, 3);
  no2.t.erase(2);
  CHECK_THROWS_AS(run(neck, no2), std::invalid_argument);
  CHECK_THROWS_AS(neck_cfg(NeckMode::PBM, 3).validate(), std::invalid_argument);
}

TEST_CASE("PBM costs more multiply-accumulates than the baseline neck") {
  ModelConfig pbm = ModelConfig::preset_config(Preset::S);
  ModelConfig base = pbm;
  base.neck = NeckMode::Baseline3Scale;
  base.ssa_variant = SsaVariant::F3Only;
  pbm.image_size = base.image_size = 640;
  const auto a = flops_count(pbm), b = flops_count(base);
  CHECK(a.module_macs.at("neck") > b.module_macs.at("neck"));
  CHECK(a.total_macs > b.total_macs);
}
