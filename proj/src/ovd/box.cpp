#include "prism/ovd/box.hpp"

#include <algorithm>
#include <cmath>

namespace prism::ovd {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x2 > x1 && y2 > y1;
}

Box Box::from_cxcywh(const std::array<double, 4>& c, double image_width, double image_height) {
  const double cx = c[0] * image_width, cy = c[1] * image_height;
  const double w = c[2] * image_width, h = c[3] * image_height;
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = iw > 0 && ih > 0 ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace prism::ovd
