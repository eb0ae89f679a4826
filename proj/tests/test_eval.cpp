#include <algorithm>
#include <tuple>

#include "doctest.h"
#include "tinyformer/eval.hpp"
#include "oracles.hpp"
#include "tinyformer/tensor.hpp"

using namespace tinyformer;
using namespace tinyformer::testing;

namespace {

EvalSettings settings(std::size_t classes = 0) {
  EvalSettings s;
  s.extent = 64;
  s.small_area = 6.4 * 6.4;
  s.medium_area = 19.2 * 19.2;
  s.num_classes = classes;
  return s;
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

void compare_with_walk(const Dets& dets, const Gts& gts, std::size_t classes) {
  const EvalResult r = ap_eval(dets, gts, settings(classes));
  const auto thr = coco_thresholds();
  const double inf = 1e300;
  CHECK(std::abs(r.ap - walk_mean(dets, gts, classes, thr, 0, inf)) < 1e-9);
  CHECK(std::abs(r.ap50 - walk_mean(dets, gts, classes, {0.5}, 0, inf)) < 1e-9);
  CHECK(std::abs(r.ap75 - walk_mean(dets, gts, classes, {thr[5]}, 0, inf)) < 1e-9);
  CHECK(std::abs(r.ap_s - walk_mean(dets, gts, classes, thr, 0, 6.4 * 6.4)) < 1e-9);
  CHECK(std::abs(r.ap_m - walk_mean(dets, gts, classes, thr, 6.4 * 6.4, 19.2 * 19.2)) < 1e-9);
  CHECK(std::abs(r.ap_l - walk_mean(dets, gts, classes, thr, 19.2 * 19.2, inf)) < 1e-9);
}

}  // namespace

TEST_CASE("a perfect detection scores 1 and no detection scores 0") {
  const Gts gts{{{0, {0.5, 0.5, 0.2, 0.2}}}};
  const EvalResult perfect = ap_eval({{{0, 0.9, {0.5, 0.5, 0.2, 0.2}}}}, gts, settings());
  CHECK(perfect.ap == doctest::Approx(1.0));
  CHECK(perfect.ap50 == doctest::Approx(1.0));
  CHECK(perfect.ap_m == doctest::Approx(1.0));
  const EvalResult none = ap_eval({{}}, gts, settings());
  CHECK(none.ap == 0.0);
  CHECK(none.ap50 == 0.0);
  const EvalResult empty = ap_eval({}, {}, settings());
  CHECK(empty.ap == 0.0);
  CHECK_THROWS_AS(ap_eval({{}, {}}, gts, settings()), std::invalid_argument);
}

TEST_CASE("hand-built 3 gt / 5 detection ranking") {
  // Ranked outcome TP FP TP FP TP: precision envelope 1, 2/3, 3/5 over
  // 34, 33 and 34 of the 101 recall levels.
  const Box a{0.2, 0.2, 0.1, 0.1}, b{0.5, 0.5, 0.1, 0.1}, c{0.8, 0.8, 0.1, 0.1}, miss{0.2, 0.8, 0.1, 0.1};
  const Gts gts{{{0, a}, {0, b}}, {{0, c}}};
  const Dets dets{{{0, 0.9, a}, {0, 0.8, miss}, {0, 0.7, b}}, {{0, 0.6, miss}, {0, 0.5, c}}};
  const EvalResult r = ap_eval(dets, gts, settings());
  const double expected = (34.0 + 33.0 * 2.0 / 3.0 + 34.0 * 0.6) / 101.0;
  CHECK(std::abs(r.ap50 - expected) < 1e-12);
  CHECK(std::abs(r.ap - expected) < 1e-12);
  compare_with_walk(dets, gts, 1);
}

TEST_CASE("matches the scalar walk on randomized cases") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    auto [dets, gts] = random_eval_case(rng, 2);
    CAPTURE(trial);
    compare_with_walk(dets, gts, 2);
  }
}

TEST_CASE("adding a correct detection never lowers AP, and AP <= AP50") {
  Rng rng(91);
  for (int trial = 0; trial < 200; ++trial) {
    auto [dets, gts] = random_eval_case(rng, 2);
    const EvalResult before = ap_eval(dets, gts, settings(2));
    CHECK(before.ap <= before.ap50 + 1e-12);
    for (double v : {before.ap, before.ap50, before.ap75, before.ap_s, before.ap_m, before.ap_l}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    // Pick a gt that no same-class detection overlaps at all.
    for (std::size_t i = 0; i < gts.size(); ++i)
      for (const auto& g : gts[i]) {
        bool touched = false;
        for (const auto& d : dets[i]) touched |= d.class_id == g.class_id && box_iou(d.box, g.box) > 0.0;
        if (touched) continue;
        Dets more = dets;
        more[i].push_back({g.class_id, rng.uniform(), g.box});
        const EvalResult after = ap_eval(more, gts, settings(2));
        CHECK(after.ap >= before.ap - 1e-12);
        CHECK(after.ap50 >= before.ap50 - 1e-12);
        goto next;
      }
  next:;
  }
}

TEST_CASE("image order does not change the result") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto [dets, gts] = random_eval_case(rng, 2);
    Dets rd(dets.rbegin(), dets.rend());
    Gts rg(gts.rbegin(), gts.rend());
    const EvalResult a = ap_eval(dets, gts, settings(2)), b = ap_eval(rd, rg, settings(2));
    CHECK(a.ap == doctest::Approx(b.ap).epsilon(1e-12));
    CHECK(a.ap_s == doctest::Approx(b.ap_s).epsilon(1e-12));
  }
}

TEST_CASE("classes without ground truth are left out of the mean") {
  const Gts gts{{{0, {0.5, 0.5, 0.2, 0.2}}}};
  const Dets dets{{{0, 0.9, {0.5, 0.5, 0.2, 0.2}}, {2, 0.8, {0.3, 0.3, 0.1, 0.1}}}};
  const EvalResult r = ap_eval(dets, gts, settings(3));
  CHECK(r.ap == doctest::Approx(1.0));
  CHECK(r.per_class == std::vector<double>{1.0, -1.0, -1.0});
}
