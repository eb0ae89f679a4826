#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "tinyformer/head.hpp"

using namespace tinyformer;
using namespace tinyformer::testing;

namespace {

HeadConfig head_cfg(std::size_t q = 10, std::size_t k = 3, std::size_t d = 16) {
  HeadConfig c;
  c.n_queries = q;
  c.num_classes = k;
  c.d_dec = d;
  c.n_layers = 2;
  c.n_heads = 2;
  return c;
}

std::map<int, Tensor<double>> pyramid_tensors(std::size_t n, std::size_t width, std::uint64_t seed) {
  std::map<int, Tensor<double>> t;
  for (int level : {3, 4, 5}) t[level] = random_tensor({n, width, 64u >> level, 64u >> level}, seed + level);
  return t;
}

FeaturePyramid<double> leaves(Tape<double>& tape, std::map<int, Tensor<double>>& t) {
  FeaturePyramid<double> p;
  for (auto& [level, tensor] : t) p.levels[level] = tape.leaf(tensor);
  return p;
}

// Corner-form GIoU written out independently of the library.
double giou_ref(const Box& a, const Box& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2, ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih, uni = a.w * a.h + b.w * b.h - inter;
  const double hull = (std::max(ax2, bx2) - std::min(ax1, bx1)) * (std::max(ay2, by2) - std::min(ay1, by1));
  return inter / uni - (hull - uni) / hull;
}

Box random_box(Rng& rng) {
  return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
}

void check_assignment(const MatchAssignment& m, const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  REQUIRE(m.pairs.size() == std::min(rows, cols));
  std::vector<bool> used_r(rows), used_c(cols);
  double total = 0.0;
  for (auto [r, c] : m.pairs) {
    REQUIRE(!used_r[r]);
    REQUIRE(!used_c[c]);
    used_r[r] = used_c[c] = true;
    total += cost[r * cols + c];
  }
  CHECK(std::abs(total - m.total_cost) < 1e-9);
}

HeadOutput<double> outputs(Tape<double>& tape, const Tensor<double>& logits, const Tensor<double>& boxes) {
  return {tape.constant(logits), tape.constant(boxes)};
}

}  // namespace

TEST_CASE("zero weights and zero features give zero logits and centered boxes") {
  ParamStore<double> store;
  Decoder<double> dec(store, "dec", head_cfg(), {3, 4, 5}, 8, 1);
  zero_params(store, [](const std::string&) { return true; });
  auto t = pyramid_tensors(2, 8, 1);
  for (auto& [l, x] : t) std::fill(x.data().begin(), x.data().end(), 0.0);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  auto out = dec(ctx, leaves(tape, t));
  REQUIRE(out.logits.shape() == Shape{2, 1, 10, 3});
  REQUIRE(out.boxes.shape() == Shape{2, 1, 10, 4});
  for (double v : out.logits.value().data()) REQUIRE(v == 0.0);
  for (double v : out.boxes.value().data()) REQUIRE(v == 0.5);
}

TEST_CASE("random decoder boxes lie strictly inside the unit square") {
  ParamStore<double> store;
  Decoder<double> dec(store, "dec", head_cfg(), {3, 4, 5}, 8, 2);
  auto t = pyramid_tensors(1, 8, 4);
  Tape<double> tape;
  Context<double> ctx{tape, false};
  auto out = dec(ctx, leaves(tape, t));
  for (double v : out.boxes.value().data()) CHECK((v > 0.0 && v < 1.0));
}

TEST_CASE("set loss gradient reaches every pyramid level") {
  ParamStore<double> store;
  const HeadConfig cfg = head_cfg(6, 3, 16);
  Decoder<double> dec(store, "dec", cfg, {3, 4, 5}, 8, 2);
  auto t = pyramid_tensors(2, 8, 7);
  Tape<double> tape;
  Context<double> ctx{tape, true};
  auto out = dec(ctx, leaves(tape, t));
  const std::vector<std::vector<GtObject>> gts{{{1, {0.3, 0.4, 0.2, 0.1}}, {0, {0.7, 0.6, 0.1, 0.3}}},
                                               {{2, {0.5, 0.5, 0.4, 0.4}}}};
  tape.backward(set_loss(out, gts, match_batch(out, gts, cfg), cfg).total);
  for (auto& [level, x] : t) {
    CAPTURE(level);
    CHECK(norm(x.grad()) > 0.0);
  }
}

TEST_CASE("cost matrix matches a scalar recomputation") {
  Rng rng(5);
  const MatchWeights w;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> probs(3 * 4), boxes;
    for (double& p : probs) p = rng.uniform();
    for (int q = 0; q < 3; ++q) {
      const Box b = random_box(rng);
      boxes.insert(boxes.end(), {b.cx, b.cy, b.w, b.h});
    }
    std::vector<GtObject> gts{{rng.below(4), random_box(rng)}, {rng.below(4), random_box(rng)}};
    const auto cost = build_cost_matrix(probs, boxes, 4, gts, w);
    REQUIRE(cost.size() == 6);
    for (std::size_t q = 0; q < 3; ++q)
      for (std::size_t g = 0; g < 2; ++g) {
        const Box p{boxes[4 * q], boxes[4 * q + 1], boxes[4 * q + 2], boxes[4 * q + 3]};
        const Box& b = gts[g].box;
        const double l1 = std::abs(p.cx - b.cx) + std::abs(p.cy - b.cy) + std::abs(p.w - b.w) + std::abs(p.h - b.h);
        const double ref = -w.cls * probs[q * 4 + gts[g].class_id] + w.l1 * l1 + w.giou * (1.0 - giou_ref(p, b));
        CHECK(std::abs(cost[q * 2 + g] - ref) < 1e-12);
      }
  }
}

TEST_CASE("cost of an exact prediction with score 1 is minus the class weight") {
  const Box b{0.4, 0.5, 0.2, 0.3};
  const std::vector<double> probs{0.0, 1.0}, boxes{b.cx, b.cy, b.w, b.h};
  const auto cost = build_cost_matrix(probs, boxes, 2, {{1, b}}, MatchWeights{});
  CHECK(cost[0] == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(build_cost_matrix(probs, boxes, 2, {}, MatchWeights{}).empty());
  CHECK(hungarian_match(std::vector<double>{}, 1, 0).pairs.empty());
  CHECK_THROWS_AS(build_cost_matrix(probs, boxes, 2, {{1, {0.5, 0.5, 0.0, 0.1}}}, MatchWeights{}),
                  std::invalid_argument);
}

TEST_CASE("hungarian small cases") {
  auto one = hungarian_match(std::vector<double>{3.5}, 1, 1);
  CHECK(one.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}});
  CHECK(one.total_cost == 3.5);
  auto two = hungarian_match(std::vector<double>{1, 10, 10, 1}, 2, 2);
  CHECK(two.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
  CHECK(two.total_cost == 2.0);
  CHECK_THROWS_AS(hungarian_match(std::vector<double>{1, NAN}, 1, 2), std::invalid_argument);
  CHECK_THROWS_AS(hungarian_match(std::vector<double>{1, INFINITY}, 2, 1), std::invalid_argument);
}

TEST_CASE("hungarian equals the exhaustive minimum for every shape up to 7x7") {
  Rng rng(2024);
  for (std::size_t rows = 1; rows <= 7; ++rows)
    for (std::size_t cols = 1; cols <= 7; ++cols)
      for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> cost(rows * cols);
        // Small integers make ties common.
        for (double& c : cost) c = trial % 2 ? rng.uniform(-5, 5) : double(rng.below(4));
        const auto m = hungarian_match(cost, rows, cols);
        check_assignment(m, cost, rows, cols);
        // Summed along the smaller side like the enumeration, so exact.
        auto pairs = m.pairs;
        if (rows < cols) std::sort(pairs.begin(), pairs.end());
        double total = 0.0;
        for (auto [r, c] : pairs) total += cost[r * cols + c];
        REQUIRE(total == brute_force_min(cost, rows, cols));
      }
}

TEST_CASE("adding a constant to every cost keeps the assignment") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 6, cols = 4;
    std::vector<double> cost(rows * cols);
    for (double& c : cost) c = rng.uniform(0, 10);
    auto shifted = cost;
    for (double& c : shifted) c += 7.25;
    const auto a = hungarian_match(cost, rows, cols), b = hungarian_match(shifted, rows, cols);
    CHECK(a.pairs == b.pairs);
    CHECK(b.total_cost == doctest::Approx(a.total_cost + 4 * 7.25).epsilon(1e-12));
  }
}

TEST_CASE("giou identities") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Box a = random_box(rng), b = random_box(rng);
    CHECK(giou(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(giou(a, b) == doctest::Approx(giou(b, a)).epsilon(1e-14));
    const Box as{a.cx + 0.37, a.cy - 0.21, a.w, a.h}, bs{b.cx + 0.37, b.cy - 0.21, b.w, b.h};
    CHECK(giou(as, bs) == doctest::Approx(giou(a, b)).epsilon(1e-12));
    CHECK(giou(a, b) == doctest::Approx(giou_ref(a, b)).epsilon(1e-12));
    CHECK(giou(a, b) > -1.0);
    CHECK(giou(a, b) <= 1.0);
  }
  const Box l{0.2, 0.5, 0.1, 0.1}, r{0.4, 0.5, 0.1, 0.1};
  CHECK(iou(l, r) == 0.0);
  CHECK(giou(l, r) < 0.0);
  CHECK_THROWS_AS(giou(l, Box{0.5, 0.5, 0.1, 0.0}), std::invalid_argument);
}

TEST_CASE("giou agrees with a 1000x1000 raster count") {
  const std::pair<Box, Box> cases[] = {{{0.30, 0.40, 0.30, 0.20}, {0.45, 0.45, 0.20, 0.30}},
                                       {{0.20, 0.20, 0.10, 0.10}, {0.70, 0.60, 0.30, 0.40}},
                                       {{0.50, 0.50, 0.50, 0.50}, {0.55, 0.52, 0.20, 0.10}}};
  constexpr int R = 1000;
  for (const auto& [a, b] : cases) {
    long inter = 0, uni = 0;
    const double hx1 = std::min(a.x1(), b.x1()), hx2 = std::max(a.x2(), b.x2());
    const double hy1 = std::min(a.y1(), b.y1()), hy2 = std::max(a.y2(), b.y2());
    long hull = 0;
    for (int y = 0; y < R; ++y)
      for (int x = 0; x < R; ++x) {
        const double px = (x + 0.5) / R, py = (y + 0.5) / R;
        const bool ia = px >= a.x1() && px < a.x2() && py >= a.y1() && py < a.y2();
        const bool ib = px >= b.x1() && px < b.x2() && py >= b.y1() && py < b.y2();
        inter += ia && ib;
        uni += ia || ib;
        hull += px >= hx1 && px < hx2 && py >= hy1 && py < hy2;
      }
    const double raster = double(inter) / uni - double(hull - uni) / hull;
    CHECK(std::abs(giou(a, b) - raster) < 2e-3);
  }
}

TEST_CASE("saturated background with no ground truth costs nothing") {
  Tensor<double> logits({2, 1, 5, 3}), boxes = Tensor<double>::create({2, 1, 5, 4}, Uniform{1, 0.2, 0.8});
  std::fill(logits.data().begin(), logits.data().end(), -20.0);
  Tape<double> tape;
  auto out = outputs(tape, logits, boxes);
  const HeadConfig cfg = head_cfg(5, 3);
  const std::vector<std::vector<GtObject>> gts(2);
  auto loss = set_loss(out, gts, match_batch(out, gts, cfg), cfg);
  CHECK(loss.total.value()[0] < 1e-12);
  CHECK(loss.l1.value()[0] == 0.0);
}

TEST_CASE("a perfect matched prediction leaves only negligible terms") {
  Tensor<double> logits({1, 1, 4, 3}), boxes = Tensor<double>::create({1, 1, 4, 4}, Uniform{2, 0.2, 0.8});
  std::fill(logits.data().begin(), logits.data().end(), -20.0);
  const Box b{0.4, 0.6, 0.2, 0.1};
  logits[2 * 3 + 1] = 20.0;
  for (std::size_t e = 0; e < 4; ++e) boxes[2 * 4 + e] = std::array{b.cx, b.cy, b.w, b.h}[e];
  Tape<double> tape;
  auto out = outputs(tape, logits, boxes);
  const HeadConfig cfg = head_cfg(4, 3);
  const std::vector<std::vector<GtObject>> gts{{{1, b}}};
  const auto m = match_batch(out, gts, cfg);
  REQUIRE(m[0].pairs == std::vector<std::pair<std::size_t, std::size_t>>{{2, 0}});
  auto loss = set_loss(out, gts, m, cfg);
  CHECK(loss.total.value()[0] < 1e-8);
}

TEST_CASE("overfitting one image drives the set loss below a quarter") {
  ParamStore<double> store;
  const HeadConfig cfg = head_cfg(6, 3, 16);
  Decoder<double> dec(store, "dec", cfg, {3, 4, 5}, 8, 3);
  auto t = pyramid_tensors(1, 8, 11);
  const std::vector<std::vector<GtObject>> gts{{{0, {0.3, 0.3, 0.2, 0.2}}, {2, {0.7, 0.6, 0.3, 0.1}}}};
  std::vector<double> losses;
  for (int step = 0; step < 50; ++step) {
    Tape<double> tape;
    Context<double> ctx{tape, true};
    FeaturePyramid<double> p;
    for (auto& [level, x] : t) p.levels[level] = tape.constant(x);
    auto out = dec(ctx, p);
    auto loss = set_loss(out, gts, match_batch(out, gts, cfg), cfg).total;
    losses.push_back(loss.value()[0]);
    store.zero_grads();
    tape.backward(loss);
    adamw_step(store, AdamWOptions{.lr = 1e-2});
  }
  INFO("initial " << losses.front() << " final " << losses.back());
  CHECK(losses.back() < 0.25 * losses.front());
  // Decreasing over every block of ten steps.
  for (std::size_t i = 10; i < losses.size(); i += 10) CHECK(losses[i] < losses[i - 10]);
}

TEST_CASE("top-k equals a full sort with query-then-class tie breaking") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t Q = 7, K = 3;
    Tensor<double> logits({1, 1, Q, K}), boxes = Tensor<double>::create({1, 1, Q, 4}, Uniform{std::uint64_t(trial), 0.1, 0.9});
    // Coarse values force ties.
    for (double& l : logits.data()) l = double(rng.below(5)) - 2.0;
    Tape<double> tape;
    auto out = outputs(tape, logits, boxes);
    std::vector<std::pair<std::size_t, std::size_t>> all;
    for (std::size_t q = 0; q < Q; ++q)
      for (std::size_t c = 0; c < K; ++c) all.emplace_back(q, c);
    std::stable_sort(all.begin(), all.end(),
                     [&](auto a, auto b) { return logits[a.first * K + a.second] > logits[b.first * K + b.second]; });
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, Q * K}) {
      const auto dets = postprocess_topk(out, 0, k);
      REQUIRE(dets.size() == k);
      for (std::size_t i = 0; i < k; ++i) {
        const auto [q, c] = all[i];
        CHECK(dets[i].class_id == c);
        CHECK(dets[i].score == doctest::Approx(1.0 / (1.0 + std::exp(-logits[q * K + c]))).epsilon(1e-15));
        CHECK(dets[i].box.cx == boxes[q * 4]);
      }
    }
  }
}

TEST_CASE("duplicate predictions are both kept") {
  Tensor<double> logits({1, 1, 3, 2}, {0.1, 3.0, 0.1, 3.0, -1.0, -1.0});
  Tensor<double> boxes({1, 1, 3, 4}, {0.5, 0.5, 0.2, 0.2, 0.5, 0.5, 0.2, 0.2, 0.1, 0.1, 0.1, 0.1});
  Tape<double> tape;
  const auto dets = postprocess_topk(outputs(tape, logits, boxes), 0, 2);
  REQUIRE(dets.size() == 2);
  CHECK(dets[0].box == dets[1].box);
  CHECK(dets[0].score == dets[1].score);
}
