#pragma once

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "fsdnet/backbone.hpp"
#include "fsdnet/box.hpp"
#include "fsdnet/nn.hpp"

namespace fsd {

// Nine (w,h) priors in input-image pixels, sorted by area ascending. The
// deepest (smallest) grid takes the three largest shapes.
struct AnchorSet {
  std::array<std::pair<double, double>, 9> anchors;

  void validate() const {
    double prev = 0.0;
    for (const auto& [w, h] : anchors) {
      if (w <= 0.0 || h <= 0.0)
        throw std::invalid_argument("anchors: sizes must be positive");
      const double area = w * h;
      if (area < prev)
        throw std::invalid_argument("anchors: must be sorted by area");
      prev = area;
    }
  }

  // scale 0 = stride 32 grid, 1 = stride 16, 2 = stride 8
  std::array<std::pair<double, double>, 3> for_scale(int scale) const {
    const int base = (2 - scale) * 3;
    return {anchors[base], anchors[base + 1], anchors[base + 2]};
  }
};

// COCO-lineage fallback priors, defined at 416 and scaled to the input size.
inline AnchorSet default_anchors(int input_size) {
  static constexpr double kBase[9][2] = {{10, 13},  {16, 30},   {33, 23},
                                         {30, 61},  {62, 45},   {59, 119},
                                         {116, 90}, {156, 198}, {373, 326}};
  AnchorSet set;
  const double s = static_cast<double>(input_size) / 416.0;
  for (int i = 0; i < 9; ++i)
    set.anchors[i] = {kBase[i][0] * s, kBase[i][1] * s};
  return set;
}

// Raw head outputs; scales[0] is the deepest (stride 32) grid. Channel layout
// per anchor: tx, ty, tw, th, t_obj, then one logit per class.
struct RawPredictions {
  std::array<Tensor, 3> scales;
};

struct Detection {
  BBox bbox;
  double score = 0.0;
  int class_id = 0;
};

inline constexpr int kAnchorsPerScale = 3;
inline constexpr int fields_per_anchor() { return 5 + kNumClasses; }
inline constexpr int head_out_channels() {
  return kAnchorsPerScale * fields_per_anchor();
}

inline double raw_field(const Tensor& raw, int64_t n, int anchor, int field,
                        int64_t cy, int64_t cx) {
  return raw.at(n, anchor * fields_per_anchor() + field, cy, cx);
}

// Four parallel branches: identity plus 5/9/13 max pools at stride 1 with
// same padding; quadruples the channel count, spatial size unchanged.
inline Tensor spp(const Tensor& x) {
  Tensor out = concat_channels(x, max_pool(x, 5, 1, 2));
  out = concat_channels(out, max_pool(x, 9, 1, 4));
  return concat_channels(out, max_pool(x, 13, 1, 6));
}

struct DetectorConfig {
  int head_channels = 32;   // 1x1 width inside head stacks; 3x3 layers use 2x
  int route_channels = 32;  // 1x1 width before each upsample
};

// SPP on the deepest tap, then three detection branches linked by
// upsample + concat routes, each ending in a 1x1 logit conv.
class DetectionHeads {
 public:
  DetectionHeads() = default;

  DetectionHeads(ParamStore& store, const std::string& name,
                 int64_t large_c, int64_t mid_c, int64_t small_c,
                 const DetectorConfig& cfg, Rng& rng) {
    const int a = cfg.head_channels, b = 2 * cfg.head_channels;
    auto make_stack = [&](std::array<ConvBnLeaky, 4>& stack,
                          const std::string& prefix, int in_c) {
      stack[0] = ConvBnLeaky(store, prefix + ".0", in_c, a, 1, 1, rng);
      stack[1] = ConvBnLeaky(store, prefix + ".1", a, b, 3, 1, rng);
      stack[2] = ConvBnLeaky(store, prefix + ".2", b, a, 1, 1, rng);
      stack[3] = ConvBnLeaky(store, prefix + ".3", a, b, 3, 1, rng);
    };
    auto make_out = [&](const std::string& prefix) {
      Conv2dLayer out(store, prefix, b, head_out_channels(), 1, 1, rng);
      // start objectness logits low so empty cells dominate the early loss
      // less; one bias slot per anchor
      for (int j = 0; j < kAnchorsPerScale; ++j)
        out.bias.data()[j * fields_per_anchor() + 4] = -4.0;
      return out;
    };

    branch_in_[0] = 4 * small_c;
    make_stack(stack0_, name + ".scale0", static_cast<int>(branch_in_[0]));
    out0_ = make_out(name + ".scale0.out");
    route01_ = ConvBnLeaky(store, name + ".route01", b, cfg.route_channels, 1,
                           1, rng);

    branch_in_[1] = cfg.route_channels + mid_c;
    make_stack(stack1_, name + ".scale1", static_cast<int>(branch_in_[1]));
    out1_ = make_out(name + ".scale1.out");
    route12_ = ConvBnLeaky(store, name + ".route12", b, cfg.route_channels, 1,
                           1, rng);

    branch_in_[2] = cfg.route_channels + large_c;
    make_stack(stack2_, name + ".scale2", static_cast<int>(branch_in_[2]));
    out2_ = make_out(name + ".scale2.out");
  }

  RawPredictions forward(const FeatureTaps& taps, bool training) const {
    auto run_stack = [&](const std::array<ConvBnLeaky, 4>& stack, Tensor x) {
      for (const auto& layer : stack) x = layer(x, training);
      return x;
    };
    RawPredictions raws;
    Tensor f0 = run_stack(stack0_, spp(taps.small));
    raws.scales[0] = out0_(f0);
    Tensor x1 = concat_channels(upsample_nearest(route01_(f0, training), 2),
                                taps.mid);
    Tensor f1 = run_stack(stack1_, x1);
    raws.scales[1] = out1_(f1);
    Tensor x2 = concat_channels(upsample_nearest(route12_(f1, training), 2),
                                taps.large);
    Tensor f2 = run_stack(stack2_, x2);
    raws.scales[2] = out2_(f2);
    return raws;
  }

  struct Audit {
    std::array<bool, 3> spp_on_branch;
    std::array<int64_t, 3> branch_input_channels;
    int out_channels;
  };

  Audit audit() const {
    return {{true, false, false}, branch_in_, head_out_channels()};
  }

 private:
  std::array<ConvBnLeaky, 4> stack0_, stack1_, stack2_;
  Conv2dLayer out0_, out1_, out2_;
  ConvBnLeaky route01_, route12_;
  std::array<int64_t, 3> branch_in_ = {0, 0, 0};
};

struct EncodedBox {
  double tx, ty, tw, th;
};

// Inverse of decode for a ground truth owned by (cell, anchor); the center
// must lie strictly inside the cell.
inline EncodedBox encode_box(const BBox& gt, int64_t grid, int64_t cell_x,
                             int64_t cell_y, double anchor_w, double anchor_h,
                             int input_size) {
  const double fx = gt.cx * grid - cell_x;
  const double fy = gt.cy * grid - cell_y;
  if (fx <= 0.0 || fx >= 1.0 || fy <= 0.0 || fy >= 1.0)
    throw std::invalid_argument("encode_box: center not inside the cell");
  return {logit(fx), logit(fy), std::log(gt.w * input_size / anchor_w),
          std::log(gt.h * input_size / anchor_h)};
}

inline BBox decode_box(double tx, double ty, double tw, double th,
                       int64_t grid, int64_t cell_x, int64_t cell_y,
                       double anchor_w, double anchor_h, int input_size) {
  BBox b;
  b.cx = (sigmoid_scalar(tx) + cell_x) / static_cast<double>(grid);
  b.cy = (sigmoid_scalar(ty) + cell_y) / static_cast<double>(grid);
  b.w = anchor_w * std::exp(std::clamp(tw, -10.0, 10.0)) / input_size;
  b.h = anchor_h * std::exp(std::clamp(th, -10.0, 10.0)) / input_size;
  return b;
}

// One Detection per (cell, anchor, class) whose objectness * class
// probability clears the threshold.
inline std::vector<Detection> decode(const Tensor& raw,
                                     const std::array<std::pair<double, double>, 3>& anchors,
                                     int input_size, double conf_thresh,
                                     int64_t batch_index = 0) {
  const Shape s = raw.shape();
  if (s.c != head_out_channels() || s.h != s.w)
    throw std::invalid_argument("decode: unexpected raw shape " + s.str());
  const int64_t grid = s.h;
  std::vector<Detection> dets;
  for (int64_t cy = 0; cy < grid; ++cy)
    for (int64_t cx = 0; cx < grid; ++cx)
      for (int j = 0; j < kAnchorsPerScale; ++j) {
        const double obj =
            sigmoid_scalar(raw_field(raw, batch_index, j, 4, cy, cx));
        for (int c = 0; c < kNumClasses; ++c) {
          const double score =
              obj * sigmoid_scalar(raw_field(raw, batch_index, j, 5 + c, cy, cx));
          if (score <= conf_thresh) continue;
          Detection d;
          d.bbox = decode_box(raw_field(raw, batch_index, j, 0, cy, cx),
                              raw_field(raw, batch_index, j, 1, cy, cx),
                              raw_field(raw, batch_index, j, 2, cy, cx),
                              raw_field(raw, batch_index, j, 3, cy, cx), grid,
                              cx, cy, anchors[j].first, anchors[j].second,
                              input_size);
          d.bbox.class_id = c;
          d.score = score;
          d.class_id = c;
          dets.push_back(d);
        }
      }
  return dets;
}

inline std::vector<Detection> decode_all(const RawPredictions& raws,
                                         const AnchorSet& anchors,
                                         int input_size, double conf_thresh,
                                         int64_t batch_index = 0) {
  std::vector<Detection> dets;
  for (int scale = 0; scale < 3; ++scale) {
    auto scaled = decode(raws.scales[scale], anchors.for_scale(scale),
                         input_size, conf_thresh, batch_index);
    dets.insert(dets.end(), scaled.begin(), scaled.end());
  }
  return dets;
}

// Greedy per-class suppression. Order: score descending, then smaller
// class_id, then input order; kept set is returned in that order.
inline std::vector<Detection> nms(const std::vector<Detection>& dets,
                                  double iou_thresh) {
  std::vector<size_t> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].class_id < dets[b].class_id;
  });
  std::vector<Detection> kept;
  for (size_t idx : order) {
    const Detection& d = dets[idx];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id != d.class_id) continue;
      if (iou(k.bbox, d.bbox) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

// Dump line consumed by the evaluator: normalized values, 6 decimals.
inline std::string format_detection(const std::string& image_id,
                                    const Detection& d) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%s %d %.6f %.6f %.6f %.6f %.6f",
                image_id.c_str(), d.class_id, d.score, d.bbox.cx, d.bbox.cy,
                d.bbox.w, d.bbox.h);
  return buf;
}

}  // namespace fsd
