#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fsdnet/box.hpp"
#include "fsdnet/rng.hpp"
#include "fsdnet/tensor.hpp"

namespace fsd {

// One training unit: image 1x3xHxW in [0,1] plus its ground-truth boxes.
struct Sample {
  Tensor image;
  std::vector<BBox> boxes;
};

struct MosaicConfig {
  int out_size = 64;
  double jitter_lo = 0.3, jitter_hi = 0.7;  // split-point range
  double scale_lo = 1.0, scale_hi = 1.5;    // relative to the quadrant fill
  double flip_prob = 0.5;
  double brightness = 0.1;  // additive range, +-
  double saturation = 0.2;  // multiplicative range around 1
  double hue = 0.05;        // shift range, +-
  int min_box_pixels = 2;

  void validate() const {
    if (out_size < 2) throw std::invalid_argument("mosaic: out_size too small");
    if (!(0.0 < jitter_lo && jitter_lo <= jitter_hi && jitter_hi < 1.0))
      throw std::invalid_argument("mosaic: jitter range must satisfy 0 < lo <= hi < 1");
    if (scale_lo <= 0.0 || scale_hi < scale_lo)
      throw std::invalid_argument("mosaic: bad scale range");
    if (min_box_pixels < 0)
      throw std::invalid_argument("mosaic: min_box_pixels must be >= 0");
  }
};

inline Tensor resize_nearest(const Tensor& img, int64_t out_h, int64_t out_w) {
  const Shape s = img.shape();
  Tensor out(Shape{s.n, s.c, out_h, out_w});
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c)
      for (int64_t y = 0; y < out_h; ++y) {
        const int64_t sy = std::clamp<int64_t>(
            static_cast<int64_t>((y + 0.5) * s.h / out_h), 0, s.h - 1);
        for (int64_t x = 0; x < out_w; ++x) {
          const int64_t sx = std::clamp<int64_t>(
              static_cast<int64_t>((x + 0.5) * s.w / out_w), 0, s.w - 1);
          out.at(n, c, y, x) = img.at(n, c, sy, sx);
        }
      }
  return out;
}

inline Sample hflip(const Sample& sample) {
  const Shape s = sample.image.shape();
  Sample out;
  out.image = Tensor(s);
  for (int64_t c = 0; c < s.c; ++c)
    for (int64_t y = 0; y < s.h; ++y)
      for (int64_t x = 0; x < s.w; ++x)
        out.image.at(0, c, y, x) = sample.image.at(0, c, y, s.w - 1 - x);
  out.boxes = sample.boxes;
  for (BBox& b : out.boxes) b.cx = 1.0 - b.cx;
  return out;
}

namespace detail {

inline void rgb_to_hsv(double r, double g, double b, double& h, double& s,
                       double& v) {
  const double maxc = std::max({r, g, b});
  const double minc = std::min({r, g, b});
  v = maxc;
  const double d = maxc - minc;
  s = maxc > 0.0 ? d / maxc : 0.0;
  if (d <= 0.0) {
    h = 0.0;
    return;
  }
  if (maxc == r)
    h = (g - b) / d;
  else if (maxc == g)
    h = (b - r) / d + 2.0;
  else
    h = (r - g) / d + 4.0;
  h /= 6.0;
  if (h < 0.0) h += 1.0;
}

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g,
                       double& b) {
  if (s <= 0.0) {
    r = g = b = v;
    return;
  }
  h = h - std::floor(h);
  const double sector = h * 6.0;
  const int i = std::min(5, static_cast<int>(sector));
  const double f = sector - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace detail

// Hue shift and saturation scale in HSV, then an additive brightness offset;
// everything clamps back to [0,1] RGB. Boxes are untouched. With unit
// saturation and zero hue the HSV round trip is skipped, so brightness-only
// calls are exact.
inline Sample photometric(const Sample& sample, double brightness_delta,
                          double sat_mul, double hue_shift) {
  const Shape s = sample.image.shape();
  Sample out;
  out.image = Tensor(s);
  out.boxes = sample.boxes;
  const bool hsv_pass = (sat_mul != 1.0 || hue_shift != 0.0);
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) {
      double r = sample.image.at(0, 0, y, x);
      double g = sample.image.at(0, 1, y, x);
      double b = sample.image.at(0, 2, y, x);
      if (hsv_pass) {
        double h, sat, v;
        detail::rgb_to_hsv(r, g, b, h, sat, v);
        h += hue_shift;
        sat = std::clamp(sat * sat_mul, 0.0, 1.0);
        detail::hsv_to_rgb(h, sat, v, r, g, b);
      }
      out.image.at(0, 0, y, x) = std::clamp(r + brightness_delta, 0.0, 1.0);
      out.image.at(0, 1, y, x) = std::clamp(g + brightness_delta, 0.0, 1.0);
      out.image.at(0, 2, y, x) = std::clamp(b + brightness_delta, 0.0, 1.0);
    }
  return out;
}

// Four-image composite. Draw order is fixed: split point first, then per
// sample (input order = TL, TR, BL, BR) flip, scale, brightness, saturation,
// hue. Each image is scaled relative to its quadrant and anchored at the
// split point, so overflow is cropped at the quadrant's far edges. Boxes are
// mapped by the same affine, clipped to the visible region, and dropped when
// a clipped side falls under min_box_pixels.
inline Sample mosaic(const std::vector<Sample>& samples,
                     const MosaicConfig& cfg, Rng& rng) {
  if (samples.size() != 4)
    throw std::invalid_argument("mosaic: exactly four samples required, got " +
                                std::to_string(samples.size()));
  cfg.validate();
  const int64_t S = cfg.out_size;
  const int64_t px = std::clamp<int64_t>(
      static_cast<int64_t>(rng.uniform(cfg.jitter_lo, cfg.jitter_hi) * S), 1,
      S - 1);
  const int64_t py = std::clamp<int64_t>(
      static_cast<int64_t>(rng.uniform(cfg.jitter_lo, cfg.jitter_hi) * S), 1,
      S - 1);

  Sample out;
  out.image = Tensor(Shape{1, 3, S, S}, 0.5);

  // quadrant bounds [x0,x1) x [y0,y1), TL TR BL BR
  const std::array<std::array<int64_t, 4>, 4> quads = {{
      {0, 0, px, py},
      {px, 0, S, py},
      {0, py, px, S},
      {px, py, S, S},
  }};

  for (int k = 0; k < 4; ++k) {
    const bool flip = rng.bernoulli(cfg.flip_prob);
    const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    const double bdelta = rng.uniform(-cfg.brightness, cfg.brightness);
    const double smul =
        rng.uniform(std::max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation);
    const double hshift = rng.uniform(-cfg.hue, cfg.hue);

    Sample cur = photometric(flip ? hflip(samples[k]) : samples[k], bdelta,
                             smul, hshift);
    const auto [qx0, qy0, qx1, qy1] = quads[k];
    const int64_t qw = qx1 - qx0, qh = qy1 - qy0;
    const int64_t sw2 = std::max<int64_t>(1, std::llround(scale * qw));
    const int64_t sh2 = std::max<int64_t>(1, std::llround(scale * qh));

    // image rectangle anchored at the split point
    int64_t rx0, ry0;
    switch (k) {
      case 0: rx0 = px - sw2; ry0 = py - sh2; break;
      case 1: rx0 = px;       ry0 = py - sh2; break;
      case 2: rx0 = px - sw2; ry0 = py;       break;
      default: rx0 = px;      ry0 = py;       break;
    }
    const int64_t rx1 = rx0 + sw2, ry1 = ry0 + sh2;
    const int64_t vx0 = std::max(qx0, rx0), vx1 = std::min(qx1, rx1);
    const int64_t vy0 = std::max(qy0, ry0), vy1 = std::min(qy1, ry1);
    if (vx0 >= vx1 || vy0 >= vy1) continue;

    const Shape ss = cur.image.shape();
    for (int64_t y = vy0; y < vy1; ++y) {
      const int64_t sy = std::clamp<int64_t>(
          static_cast<int64_t>((y - ry0 + 0.5) * ss.h / sh2), 0, ss.h - 1);
      for (int64_t x = vx0; x < vx1; ++x) {
        const int64_t sx = std::clamp<int64_t>(
            static_cast<int64_t>((x - rx0 + 0.5) * ss.w / sw2), 0, ss.w - 1);
        for (int64_t c = 0; c < 3; ++c)
          out.image.at(0, c, y, x) = cur.image.at(0, c, sy, sx);
      }
    }

    for (const BBox& box : cur.boxes) {
      double bx1 = rx0 + (box.cx - box.w / 2) * sw2;
      double bx2 = rx0 + (box.cx + box.w / 2) * sw2;
      double by1 = ry0 + (box.cy - box.h / 2) * sh2;
      double by2 = ry0 + (box.cy + box.h / 2) * sh2;
      bx1 = std::max<double>(bx1, vx0);
      by1 = std::max<double>(by1, vy0);
      bx2 = std::min<double>(bx2, vx1);
      by2 = std::min<double>(by2, vy1);
      if (bx2 - bx1 < cfg.min_box_pixels || by2 - by1 < cfg.min_box_pixels)
        continue;
      BBox nb;
      nb.cx = (bx1 + bx2) / 2.0 / S;
      nb.cy = (by1 + by2) / 2.0 / S;
      nb.w = (bx2 - bx1) / S;
      nb.h = (by2 - by1) / S;
      nb.class_id = box.class_id;
      out.boxes.push_back(nb);
    }
  }
  return out;
}

}  // namespace fsd
