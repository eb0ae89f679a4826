#include "tinyformer/box.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace tinyformer {

void validate_box(const Box& b) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    throw std::invalid_argument("degenerate box: w=" + std::to_string(b.w) +
                                " h=" + std::to_string(b.h));
  }
}

double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  const double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  validate_box(a);
  validate_box(b);
  std::array<double, 4> unused{};
  return giou_and_grad(a, b, unused);
}

double giou_and_grad(const Box& a, const Box& b, std::array<double, 4>& grad_a) {
  const double ax1 = a.x1(), ax2 = a.x2(), ay1 = a.y1(), ay2 = a.y2();
  const double bx1 = b.x1(), bx2 = b.x2(), by1 = b.y1(), by2 = b.y2();

  const double ix1 = std::max(ax1, bx1), ix2 = std::min(ax2, bx2);
  const double iy1 = std::max(ay1, by1), iy2 = std::min(ay2, by2);
  const double iw = std::max(0.0, ix2 - ix1);
  const double ih = std::max(0.0, iy2 - iy1);
  const double inter = iw * ih;
  const double area_a = (ax2 - ax1) * (ay2 - ay1);
  const double area_b = (bx2 - bx1) * (by2 - by1);
  const double uni = area_a + area_b - inter;
  const double hw = std::max(ax2, bx2) - std::min(ax1, bx1);
  const double hh = std::max(ay2, by2) - std::min(ay1, by1);
  const double hull = hw * hh;
  if (!(uni > 0.0) || !(hull > 0.0)) throw std::invalid_argument("giou: empty union");

  const double io = inter / uni;
  const double value = io - (hull - uni) / hull;

  // Partial derivatives with respect to the corners of a: x1, x2, y1, y2.
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double d_inter_x1 = (overlap && ax1 >= bx1) ? -ih : 0.0;
  const double d_inter_x2 = (overlap && ax2 <= bx2) ? ih : 0.0;
  const double d_inter_y1 = (overlap && ay1 >= by1) ? -iw : 0.0;
  const double d_inter_y2 = (overlap && ay2 <= by2) ? iw : 0.0;
  const double ah = ay2 - ay1, aw = ax2 - ax1;
  const double d_area_x1 = -ah, d_area_x2 = ah, d_area_y1 = -aw, d_area_y2 = aw;
  const double d_hull_x1 = ax1 <= bx1 ? -hh : 0.0;
  const double d_hull_x2 = ax2 >= bx2 ? hh : 0.0;
  const double d_hull_y1 = ay1 <= by1 ? -hw : 0.0;
  const double d_hull_y2 = ay2 >= by2 ? hw : 0.0;

  auto corner_grad = [&](double d_inter, double d_area, double d_hull) {
    const double d_union = d_area - d_inter;
    const double d_iou = (d_inter * uni - inter * d_union) / (uni * uni);
    // giou = iou - 1 + union / hull
    return d_iou + (d_union * hull - uni * d_hull) / (hull * hull);
  };
  const double g_x1 = corner_grad(d_inter_x1, d_area_x1, d_hull_x1);
  const double g_x2 = corner_grad(d_inter_x2, d_area_x2, d_hull_x2);
  const double g_y1 = corner_grad(d_inter_y1, d_area_y1, d_hull_y1);
  const double g_y2 = corner_grad(d_inter_y2, d_area_y2, d_hull_y2);

  grad_a[0] = g_x1 + g_x2;
  grad_a[1] = g_y1 + g_y2;
  grad_a[2] = 0.5 * (g_x2 - g_x1);
  grad_a[3] = 0.5 * (g_y2 - g_y1);
  return value;
}

}  // namespace tinyformer
