#include "tinyformer/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace tinyformer {

namespace {

struct Range {
  double lo, hi;
  bool contains(double a) const { return a >= lo && a < hi; }
};

struct Scored {
  double score;
  bool tp;
};

// Greedy matching of one image / class at one threshold. Appends the
// non-ignored detections to `out` and returns the non-ignored gt count.
std::size_t match_image(const std::vector<const Detection*>& dets, const std::vector<const GtObject*>& gts,
                        double thr, const Range& range, double area_scale, std::vector<Scored>& out) {
  // Non-ignored ground truths first, order otherwise preserved.
  std::vector<const GtObject*> g = gts;
  std::stable_partition(g.begin(), g.end(),
                        [&](const GtObject* o) { return range.contains(o->box.area() * area_scale); });
  std::vector<char> g_ignored(g.size());
  std::size_t n_valid = 0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    g_ignored[j] = !range.contains(g[j]->box.area() * area_scale);
    n_valid += !g_ignored[j];
  }
  std::vector<char> g_taken(g.size(), 0);
  for (const Detection* d : dets) {
    double best = std::min(thr, 1.0 - 1e-10);
    long m = -1;
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g_taken[j]) continue;
      // Once matched to a real gt, stop before the ignored tail.
      if (m >= 0 && !g_ignored[m] && g_ignored[j]) break;
      const double o = iou(d->box, g[j]->box);
      if (o < best) continue;
      best = o;
      m = static_cast<long>(j);
    }
    if (m >= 0) {
      g_taken[m] = 1;
      if (!g_ignored[m]) out.push_back({d->score, true});
    } else if (range.contains(d->box.area() * area_scale)) {
      out.push_back({d->score, false});
    }
  }
  return n_valid;
}

// 101-point interpolated AP of score-sorted tp/fp flags.
double interpolated_ap(std::vector<Scored>& scored, std::size_t n_gt) {
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  const std::size_t n = scored.size();
  std::vector<double> recall(n), precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += scored[i].tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  return sum / 101.0;
}

}  // namespace

EvalResult ap_eval(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<GtObject>>& gts,
                   const EvalSettings& settings) {
  if (dets.size() != gts.size()) throw std::invalid_argument("ap_eval: detection/ground-truth image counts differ");
  std::vector<double> thresholds = settings.iou_thresholds;
  if (thresholds.empty())
    for (int i = 0; i < 10; ++i) thresholds.push_back(0.5 + 0.05 * i);

  std::size_t num_classes = settings.num_classes;
  if (num_classes == 0) {
    for (const auto& im : gts)
      for (const auto& o : im) num_classes = std::max(num_classes, o.class_id + 1);
    for (const auto& im : dets)
      for (const auto& d : im) num_classes = std::max(num_classes, d.class_id + 1);
  }
  const double area_scale = settings.extent * settings.extent;
  constexpr double inf = std::numeric_limits<double>::infinity();
  const Range ranges[4] = {{0.0, inf}, {0.0, settings.small_area}, {settings.small_area, settings.medium_area},
                           {settings.medium_area, inf}};
  const std::size_t T = thresholds.size();

  // ap[range][class][threshold], negative = no ground truth.
  std::vector<double> ap(4 * num_classes * T, -1.0);
  auto cell = [&](std::size_t r, std::size_t c, std::size_t t) -> double& { return ap[(r * num_classes + c) * T + t]; };

  for (std::size_t c = 0; c < num_classes; ++c) {
    // Per-image, per-class views, detections in score order capped at max_dets.
    std::vector<std::vector<const Detection*>> d_img(dets.size());
    std::vector<std::vector<const GtObject*>> g_img(gts.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
      for (const auto& d : dets[i])
        if (d.class_id == c) d_img[i].push_back(&d);
      std::stable_sort(d_img[i].begin(), d_img[i].end(),
                       [](const Detection* a, const Detection* b) { return a->score > b->score; });
      if (d_img[i].size() > settings.max_dets) d_img[i].resize(settings.max_dets);
      for (const auto& g : gts[i])
        if (g.class_id == c) g_img[i].push_back(&g);
    }
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t t = 0; t < T; ++t) {
        std::vector<Scored> scored;
        std::size_t n_gt = 0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
          n_gt += match_image(d_img[i], g_img[i], thresholds[t], ranges[r], area_scale, scored);
        }
        if (n_gt > 0) cell(r, c, t) = interpolated_ap(scored, n_gt);
      }
  }

  auto mean_over = [&](std::size_t r, long only_t) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < num_classes; ++c)
      for (std::size_t t = 0; t < T; ++t) {
        if (only_t >= 0 && static_cast<long>(t) != only_t) continue;
        if (cell(r, c, t) < 0) continue;
        s += cell(r, c, t);
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  };
  auto threshold_index = [&](double v) -> long {
    for (std::size_t t = 0; t < T; ++t)
      if (std::abs(thresholds[t] - v) < 1e-9) return static_cast<long>(t);
    return -2;
  };

  EvalResult res;
  res.ap = mean_over(0, -1);
  const long i50 = threshold_index(0.5), i75 = threshold_index(0.75);
  res.ap50 = i50 >= 0 ? mean_over(0, i50) : 0.0;
  res.ap75 = i75 >= 0 ? mean_over(0, i75) : 0.0;
  res.ap_s = mean_over(1, -1);
  res.ap_m = mean_over(2, -1);
  res.ap_l = mean_over(3, -1);
  for (std::size_t c = 0; c < num_classes; ++c) {
    double s = 0.0;
    bool any = false;
    for (std::size_t t = 0; t < T; ++t) {
      if (cell(0, c, t) < 0) continue;
      s += cell(0, c, t);
      any = true;
    }
    res.per_class.push_back(any ? s / static_cast<double>(T) : -1.0);
  }
  return res;
}

}  // namespace tinyformer
