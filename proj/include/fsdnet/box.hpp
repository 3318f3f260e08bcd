#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fsd {

// Axis-aligned box, center-size form, normalized to [0,1] image coordinates.
struct BBox {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
  int class_id = 0;  // 0 = fire, 1 = smoke
};

constexpr int kNumClasses = 2;
constexpr const char* kClassNames[kNumClasses] = {"fire", "smoke"};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clamp_prob(double p) {
  return std::clamp(p, 1e-7, 1.0 - 1e-7);
}

// -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-7, 1-1e-7]
inline double bce(double p, double y) {
  p = clamp_prob(p);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

inline double iou(const BBox& a, const BBox& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::min(ax2, bx2) - std::max(ax1, bx1);
  const double ih = std::min(ay2, by2) - std::max(ay1, by1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  // areas from the same corner differences, so identical boxes give exactly 1
  const double uni =
      (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// IoU of two shapes with centers aligned, used for anchor matching.
inline double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  const double uni = w1 * h1 + w2 * h2 - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace fsd
