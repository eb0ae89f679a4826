#pragma once

#include <string>
#include <vector>

#include "tinyformer/head.hpp"

namespace tinyformer {

struct EvalSettings {
  std::vector<double> iou_thresholds;  // empty = 0.50:0.05:0.95
  /// Pixel-area bounds of the small/medium buckets; areas are measured as
  /// w * h * extent^2.
  double small_area = 0.0, medium_area = 0.0;
  double extent = 64.0;
  std::size_t max_dets = 100;
  std::size_t num_classes = 0;  // 0 = infer from the data
};

struct EvalResult {
  double ap = 0, ap50 = 0, ap75 = 0, ap_s = 0, ap_m = 0, ap_l = 0;
  /// Mean over IoU thresholds per class; -1 when the class has no ground truth.
  std::vector<double> per_class;
};

/// COCO-protocol AP. Detections are matched greedily per image, class and
/// IoU threshold in descending score order; each gt matches at most once.
/// Ground truths outside an area bucket are ignored for that bucket, as are
/// unmatched detections outside it. Precision is made monotone and sampled
/// at 101 recall points. (class, bucket) cells without ground truth are left
/// out of the means.
EvalResult ap_eval(const std::vector<std::vector<Detection>>& dets, const std::vector<std::vector<GtObject>>& gts,
                   const EvalSettings& settings);

}  // namespace tinyformer
