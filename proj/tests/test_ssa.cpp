#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "tinyformer/ssa.hpp"

using namespace tinyformer;
using namespace tinyformer::testing;

namespace {

SsaConfig ssa_cfg(SsaVariant v = SsaVariant::Proposed, std::size_t C = 4, std::size_t d_back = 8,
                  std::size_t d_neck = 8) {
  SsaConfig c;
  c.variant = v;
  c.base_channels = C;
  c.d_back = d_back;
  c.d_neck = d_neck;
  return c;
}

struct Inputs {
  Tensor<double> image, t3, t4, t5;
  Inputs(std::size_t n, std::size_t h, std::size_t w, std::size_t d_back, std::uint64_t seed)
      : image(random_tensor({n, 3, h, w}, seed)),
        t3(random_tensor({n, d_back, h / 16, w / 16}, seed + 1)),
        t4(random_tensor({n, d_back, h / 16, w / 16}, seed + 2)),
        t5(random_tensor({n, d_back, h / 16, w / 16}, seed + 3)) {}
  std::array<Var<double>, 3> taps(Tape<double>& tape) { return {tape.leaf(t3), tape.leaf(t4), tape.leaf(t5)}; }
};

constexpr SsaVariant kAll[] = {SsaVariant::Proposed,      SsaVariant::UpToF4,        SsaVariant::UpToF5,
                               SsaVariant::F2F3F5,        SsaVariant::BottleneckSPB, SsaVariant::EarlyF2Fusion,
                               SsaVariant::F3Only};

Tensor<double> silu_bn_identity(Tensor<double> x) {
  for (double& v : x.data()) {
    v /= std::sqrt(1.0 + 1e-5);
    v = v / (1.0 + std::exp(-v));
  }
  return x;
}

}  // namespace

TEST_CASE("SDE ladder doubles width per stage and matches composed direct convolutions") {
  ParamStore<double> store;
  SpatialSemanticAdapter<double> ssa(store, "ssa", ssa_cfg(SsaVariant::Proposed, 16, 8, 8), 1);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  const Tensor<double> img = random_tensor({1, 3, 64, 64}, 2);
  auto image = tape.constant(img);
  CHECK(bit_equal(ssa.sde(ctx, image, 0).value(), img));
  CHECK(ssa.sde(ctx, image, 2).shape() == Shape{1, 32, 16, 16});
  const Tensor<double>& got = ssa.sde(ctx, image, 3).value();
  REQUIRE(got.shape() == Shape{1, 64, 8, 8});

  Tensor<double> ref = img;
  for (const auto& stage : ssa.sde_stages()) ref = silu_bn_identity(conv_oracle(ref, stage.conv().weight(), nullptr, 2, 1));
  CHECK(linf(got, ref) < 1e-12);
  CHECK_THROWS_AS(ssa.sde(ctx, image, 4), std::invalid_argument);
}

TEST_CASE("proposed pyramid at C=16, d_neck=192") {
  ParamStore<double> store;
  SpatialSemanticAdapter<double> ssa(store, "ssa", ssa_cfg(SsaVariant::Proposed, 16, 32, 192), 1);
  Inputs in(1, 64, 64, 32, 5);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  auto pyr = ssa(ctx, tape.constant(in.image), in.taps(tape));
  CHECK(pyr.indices() == std::vector<int>{2, 3, 4, 5});
  CHECK(pyr.at(2).shape() == Shape{1, 32, 16, 16});
  CHECK(pyr.at(3).shape() == Shape{1, 192, 8, 8});
  CHECK(pyr.at(4).shape() == Shape{1, 192, 4, 4});
  CHECK(pyr.at(5).shape() == Shape{1, 192, 2, 2});
}

TEST_CASE("every variant emits exact strides for extents 32 to 128") {
  for (SsaVariant v : kAll) {
    ParamStore<double> store;
    const SsaConfig cfg = ssa_cfg(v);
    SpatialSemanticAdapter<double> ssa(store, "ssa", cfg, 3);
    for (std::size_t h : {32, 64, 96, 128})
      for (std::size_t w : {32, 64, 96, 128}) {
        Inputs in(1, h, w, 8, h + w);
        Tape<double> tape;
        Context<double> ctx{tape, false};
        auto pyr = ssa(ctx, tape.constant(in.image), in.taps(tape));
        CAPTURE(to_string(v));
        CAPTURE(h);
        CAPTURE(w);
        CHECK(pyr.has(2) == cfg.emits_f2());
        for (int level : pyr.indices()) {
          const Shape s = pyr.at(level).shape();
          CHECK(s.h == h >> level);
          CHECK(s.w == w >> level);
          CHECK(s.c == (level == 2 ? cfg.f2_width() : cfg.d_neck));
        }
      }
  }
}

TEST_CASE("F3Only agrees bit-exactly with Proposed on levels 3 to 5") {
  ParamStore<double> sp, sf;
  SpatialSemanticAdapter<double> proposed(sp, "ssa", ssa_cfg(SsaVariant::Proposed), 17);
  SpatialSemanticAdapter<double> f3only(sf, "ssa", ssa_cfg(SsaVariant::F3Only), 17);
  Inputs in(2, 64, 32, 8, 9);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  auto image = tape.constant(in.image);
  auto a = proposed(ctx, image, in.taps(tape));
  auto b = f3only(ctx, image, in.taps(tape));
  CHECK(b.indices() == std::vector<int>{3, 4, 5});
  for (int level : {3, 4, 5}) CHECK(bit_equal(a.at(level).value(), b.at(level).value()));
}

TEST_CASE("with a zero image and zero SDE, F3 ignores the SDE half of the fusion weights") {
  ParamStore<double> store;
  SpatialSemanticAdapter<double> ssa(store, "ssa", ssa_cfg(), 4);
  zero_params(store, [](const std::string& n) { return contains(n, ".sde") && contains(n, "conv.weight"); });
  Inputs in(1, 32, 32, 8, 2);
  std::fill(in.image.data().begin(), in.image.data().end(), 0.0);
  auto run = [&] {
    Tape<double> tape;
    Context<double> ctx{tape, false};
    return ssa(ctx, tape.constant(in.image), in.taps(tape)).at(3).value();
  };
  const Tensor<double> before = run();
  // Input channels [0, 4C) of fuse3 see the SDE output; scramble them.
  Tensor<double>& w = ssa.fuse3().conv().weight();
  Rng rng(99);
  for (std::size_t co = 0; co < w.shape().n; ++co)
    for (std::size_t ci = 0; ci < 16; ++ci) w.at(co, ci, 0, 0) = rng.normal();
  CHECK(bit_equal(before, run()));
  w.at(0, 16, 0, 0) += 1.0;
  CHECK(linf(before, run()) > 1e-6);
}

TEST_CASE("gradients reach the image path and the tap path") {
  ParamStore<double> store;
  SpatialSemanticAdapter<double> ssa(store, "ssa", ssa_cfg(), 6);
  Inputs in(2, 32, 32, 8, 30);
  auto grads = [&](int level) {
    for (Tensor<double>* t : {&in.image, &in.t3, &in.t4, &in.t5}) t->drop_grad();
    Tape<double> tape;
    Context<double> ctx{tape, false};
    auto pyr = ssa(ctx, tape.leaf(in.image), in.taps(tape));
    const Tensor<double> w = random_tensor(pyr.at(level).shape(), 7 + level);
    tape.backward(weighted_sum(pyr.at(level), w));
    std::array<double, 4> n{};
    const Tensor<double>* ts[] = {&in.image, &in.t3, &in.t4, &in.t5};
    for (std::size_t i = 0; i < 4; ++i) n[i] = ts[i]->has_grad() ? norm(ts[i]->grad()) : 0.0;
    return n;
  };
  const auto g2 = grads(2), g3 = grads(3), g4 = grads(4), g5 = grads(5);
  CHECK(g2[0] > 0.0);
  CHECK(g2[1] + g2[2] + g2[3] == 0.0);
  CHECK(g3[0] > 0.0);
  CHECK(g3[1] > 0.0);
  CHECK(g4[2] > 0.0);
  CHECK(g5[3] > 0.0);
}

TEST_CASE("mismatched taps are rejected") {
  ParamStore<double> store;
  SpatialSemanticAdapter<double> ssa(store, "ssa", ssa_cfg(), 6);
  Inputs in(1, 64, 64, 8, 1);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  auto taps = in.taps(tape);
  taps[1] = tape.constant(random_tensor({1, 8, 2, 2}, 3));
  CHECK_THROWS_AS(ssa(ctx, tape.constant(in.image), taps), std::invalid_argument);
  CHECK_THROWS_AS(ssa(ctx, tape.constant(random_tensor({1, 3, 48, 48}, 3)), in.taps(tape)), std::invalid_argument);
}
