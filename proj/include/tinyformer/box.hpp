#pragma once

#include <array>

namespace tinyformer {

/// Center-format box normalized to the image extents.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Throws std::invalid_argument when w or h is not positive.
void validate_box(const Box& b);

double iou(const Box& a, const Box& b);

/// Generalized IoU: IoU - |hull \ union| / |hull|, in (-1, 1].
/// Throws on degenerate boxes.
double giou(const Box& a, const Box& b);

/// GIoU and its gradient with respect to (cx, cy, w, h) of `a`. Unlike giou(),
/// `a` may be degenerate as long as the union is non-empty.
double giou_and_grad(const Box& a, const Box& b, std::array<double, 4>& grad_a);

}  // namespace tinyformer
