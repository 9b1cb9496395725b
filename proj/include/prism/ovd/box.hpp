#pragma once

#include <array>

namespace prism::ovd {

/// Axis-aligned box in absolute pixels, corners (x1, y1) and (x2, y2).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const;

  static Box from_xywh(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }
  /// From normalized (cx, cy, w, h) scaled to an image of the given size.
  static Box from_cxcywh(const std::array<double, 4>& c, double image_width = 1.0, double image_height = 1.0);

  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union by area; 0 when the union is empty.
double iou(const Box& a, const Box& b);

}  // namespace prism::ovd
