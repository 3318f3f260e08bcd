#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fsdnet/box.hpp"
#include "fsdnet/detector.hpp"

namespace fsd {

struct LossWeights {
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;

  void validate() const {
    if (lambda_coord <= 0.0 || lambda_noobj <= 0.0)
      throw std::invalid_argument("loss weights must be positive");
  }
};

enum class BoxMode { kMse, kCiou };

struct LossBreakdown {
  double box = 0.0, obj = 0.0, cls = 0.0, total = 0.0;
};

struct CiouGrad {
  double d_cx = 0.0, d_cy = 0.0, d_w = 0.0, d_h = 0.0;
};

// 1 - IoU + rho^2/c^2 + alpha*v with v the aspect-ratio penalty and
// alpha = v / ((1 - IoU) + v). If both boxes collapse to the same point
// (zero enclosing diagonal) only the 1 - IoU term remains.
// The gradient w.r.t. the predicted box differentiates alpha exactly.
inline double ciou_loss(const BBox& pred, const BBox& gt,
                        CiouGrad* grad = nullptr) {
  if (pred.w <= 0.0 || pred.h <= 0.0 || gt.w <= 0.0 || gt.h <= 0.0)
    throw std::invalid_argument("ciou_loss: boxes must have positive size");
  const double px1 = pred.cx - pred.w / 2, px2 = pred.cx + pred.w / 2;
  const double py1 = pred.cy - pred.h / 2, py2 = pred.cy + pred.h / 2;
  const double gx1 = gt.cx - gt.w / 2, gx2 = gt.cx + gt.w / 2;
  const double gy1 = gt.cy - gt.h / 2, gy2 = gt.cy + gt.h / 2;

  const double iw = std::min(px2, gx2) - std::max(px1, gx1);
  const double ih = std::min(py2, gy2) - std::max(py1, gy1);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni =
      (px2 - px1) * (py2 - py1) + (gx2 - gx1) * (gy2 - gy1) - inter;
  const double iou_v = inter / uni;

  // d(inter)/d(corner), nonzero only where the pred corner is the active one
  double di_px1 = 0.0, di_px2 = 0.0, di_py1 = 0.0, di_py2 = 0.0;
  if (inter > 0.0) {
    di_px1 = (px1 > gx1) ? -ih : 0.0;
    di_px2 = (px2 < gx2) ? ih : 0.0;
    di_py1 = (py1 > gy1) ? -iw : 0.0;
    di_py2 = (py2 < gy2) ? iw : 0.0;
  }
  const double di_cx = di_px1 + di_px2;
  const double di_cy = di_py1 + di_py2;
  const double di_w = 0.5 * (di_px2 - di_px1);
  const double di_h = 0.5 * (di_py2 - di_py1);

  const double du_cx = -di_cx, du_cy = -di_cy;
  const double du_w = pred.h - di_w, du_h = pred.w - di_h;
  const double uni2 = uni * uni;
  const double diou_cx = (di_cx * uni - inter * du_cx) / uni2;
  const double diou_cy = (di_cy * uni - inter * du_cy) / uni2;
  const double diou_w = (di_w * uni - inter * du_w) / uni2;
  const double diou_h = (di_h * uni - inter * du_h) / uni2;

  const double cw = std::max(px2, gx2) - std::min(px1, gx1);
  const double ch = std::max(py2, gy2) - std::min(py1, gy1);
  const double c2 = cw * cw + ch * ch;
  if (c2 <= 0.0) {
    if (grad) *grad = {-diou_cx, -diou_cy, -diou_w, -diou_h};
    return 1.0 - iou_v;
  }

  const double rho2 = (pred.cx - gt.cx) * (pred.cx - gt.cx) +
                      (pred.cy - gt.cy) * (pred.cy - gt.cy);
  const double dcw_px2 = (px2 > gx2) ? 1.0 : 0.0;
  const double dcw_px1 = (px1 < gx1) ? -1.0 : 0.0;
  const double dch_py2 = (py2 > gy2) ? 1.0 : 0.0;
  const double dch_py1 = (py1 < gy1) ? -1.0 : 0.0;
  const double dc2_cx = 2 * cw * (dcw_px1 + dcw_px2);
  const double dc2_cy = 2 * ch * (dch_py1 + dch_py2);
  const double dc2_w = 2 * cw * 0.5 * (dcw_px2 - dcw_px1);
  const double dc2_h = 2 * ch * 0.5 * (dch_py2 - dch_py1);
  const double c4 = c2 * c2;
  const double dR_cx = (2 * (pred.cx - gt.cx) * c2 - rho2 * dc2_cx) / c4;
  const double dR_cy = (2 * (pred.cy - gt.cy) * c2 - rho2 * dc2_cy) / c4;
  const double dR_w = -rho2 * dc2_w / c4;
  const double dR_h = -rho2 * dc2_h / c4;

  constexpr double k = 4.0 / (3.14159265358979323846 * 3.14159265358979323846);
  const double delta = std::atan(gt.w / gt.h) - std::atan(pred.w / pred.h);
  const double v = k * delta * delta;
  const double wh2 = pred.w * pred.w + pred.h * pred.h;
  const double dv_w = -2.0 * k * delta * pred.h / wh2;
  const double dv_h = 2.0 * k * delta * pred.w / wh2;

  const double D = (1.0 - iou_v) + v;
  const double alpha = (D > 0.0) ? v / D : 0.0;
  const double loss = 1.0 - iou_v + rho2 / c2 + alpha * v;

  if (grad) {
    double dL_iou = -1.0, dL_v = 0.0;
    if (D > 0.0) {
      dL_iou += v * v / (D * D);
      dL_v = (2.0 * v * D - v * v) / (D * D);
    }
    grad->d_cx = dL_iou * diou_cx + dR_cx;
    grad->d_cy = dL_iou * diou_cy + dR_cy;
    grad->d_w = dL_iou * diou_w + dR_w + dL_v * dv_w;
    grad->d_h = dL_iou * diou_h + dR_h + dL_v * dv_h;
  }
  return loss;
}

// The (scale, cell, anchor) responsibility masks for one image.
struct Assignment {
  struct Scale {
    int64_t grid = 0;
    std::vector<uint8_t> obj;    // M*K*K slots, layout (anchor, cy, cx)
    std::vector<uint8_t> noobj;  // complement minus ignored slots
    std::vector<int> gt_index;   // per slot, -1 when unassigned
  };
  std::array<Scale, 3> scales;
  std::vector<BBox> gts;

  static int64_t slot(int anchor, int64_t cy, int64_t cx, int64_t grid) {
    return (anchor * grid + cy) * grid + cx;
  }

  int64_t assigned_count() const {
    int64_t total = 0;
    for (const auto& s : scales)
      for (uint8_t m : s.obj) total += m;
    return total;
  }
};

// Each ground truth claims the cell containing its center at the scale of its
// best shape-IoU anchor; if that slot is taken the next-best anchor is tried.
// Slots whose center-aligned anchor box overlaps any ground truth above the
// ignore threshold drop out of the noobj mask.
inline Assignment assign_targets(const std::vector<BBox>& gts,
                                 const AnchorSet& anchors,
                                 const std::array<int64_t, 3>& grids,
                                 int input_size,
                                 double ignore_thresh = 0.5) {
  Assignment out;
  out.gts = gts;
  for (int s = 0; s < 3; ++s) {
    auto& sc = out.scales[s];
    sc.grid = grids[s];
    const size_t slots = kAnchorsPerScale * grids[s] * grids[s];
    sc.obj.assign(slots, 0);
    sc.noobj.assign(slots, 1);
    sc.gt_index.assign(slots, -1);
  }

  for (size_t gi = 0; gi < gts.size(); ++gi) {
    const BBox& gt = gts[gi];
    if (gt.cx < 0.0 || gt.cx >= 1.0 || gt.cy < 0.0 || gt.cy >= 1.0)
      throw std::invalid_argument("assign_targets: box center outside [0,1)");
    if (gt.w <= 0.0 || gt.h <= 0.0)
      throw std::invalid_argument("assign_targets: box size must be positive");
    std::array<std::pair<double, int>, 9> ranked;
    for (int a = 0; a < 9; ++a)
      ranked[a] = {shape_iou(gt.w * input_size, gt.h * input_size,
                             anchors.anchors[a].first,
                             anchors.anchors[a].second),
                   a};
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& x, const auto& y) { return x.first > y.first; });
    for (const auto& [score, a] : ranked) {
      const int scale = 2 - a / 3;
      const int local = a % 3;
      const int64_t grid = out.scales[scale].grid;
      const int64_t cx = static_cast<int64_t>(gt.cx * grid);
      const int64_t cy = static_cast<int64_t>(gt.cy * grid);
      const int64_t idx = Assignment::slot(local, cy, cx, grid);
      if (out.scales[scale].obj[idx]) continue;  // taken by an earlier gt
      out.scales[scale].obj[idx] = 1;
      out.scales[scale].noobj[idx] = 0;
      out.scales[scale].gt_index[idx] = static_cast<int>(gi);
      break;
    }
  }

  if (!gts.empty()) {
    for (int s = 0; s < 3; ++s) {
      auto& sc = out.scales[s];
      const auto scale_anchors = anchors.for_scale(s);
      for (int j = 0; j < kAnchorsPerScale; ++j)
        for (int64_t cy = 0; cy < sc.grid; ++cy)
          for (int64_t cx = 0; cx < sc.grid; ++cx) {
            const int64_t idx = Assignment::slot(j, cy, cx, sc.grid);
            if (!sc.noobj[idx]) continue;
            BBox cell_box;
            cell_box.cx = (cx + 0.5) / sc.grid;
            cell_box.cy = (cy + 0.5) / sc.grid;
            cell_box.w = scale_anchors[j].first / input_size;
            cell_box.h = scale_anchors[j].second / input_size;
            for (const BBox& gt : gts)
              if (iou(cell_box, gt) > ignore_thresh) {
                sc.noobj[idx] = 0;
                break;
              }
          }
    }
  }
  return out;
}

namespace detail {

// d(bce)/d(logit); zero inside the probability clamp bands
inline double bce_grad_logit(double t, double target) {
  const double p = sigmoid_scalar(t);
  if (p <= 1e-7 || p >= 1.0 - 1e-7) return 0.0;
  return p - target;
}

}  // namespace detail

// Composite objective over all three scales, averaged per image. Gradients
// w.r.t. the raw head outputs are assembled during the forward pass and
// attached as a fused backward node.
inline std::pair<Tensor, LossBreakdown> total_loss(
    const RawPredictions& raws, const std::vector<Assignment>& per_image,
    const AnchorSet& anchors, int input_size, const LossWeights& weights,
    BoxMode mode) {
  weights.validate();
  const int64_t batch = raws.scales[0].shape().n;
  if (static_cast<int64_t>(per_image.size()) != batch)
    throw std::invalid_argument("total_loss: one assignment per image needed");
  for (int s = 0; s < 3; ++s) {
    const Shape sh = raws.scales[s].shape();
    if (sh.c != head_out_channels() || sh.h != sh.w)
      throw std::invalid_argument("total_loss: bad raw shape " + sh.str());
    for (const auto& asg : per_image)
      if (asg.scales[s].grid != sh.h)
        throw std::invalid_argument("total_loss: assignment grid mismatch");
  }

  const bool need_grad = raws.scales[0].requires_grad() ||
                         raws.scales[1].requires_grad() ||
                         raws.scales[2].requires_grad();
  std::array<std::vector<double>, 3> grads;
  if (need_grad)
    for (int s = 0; s < 3; ++s)
      grads[s].assign(raws.scales[s].data().size(), 0.0);

  LossBreakdown sums;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (int64_t n = 0; n < batch; ++n) {
    const Assignment& asg = per_image[n];
    for (int s = 0; s < 3; ++s) {
      const Tensor& raw = raws.scales[s];
      const auto scale_anchors = anchors.for_scale(s);
      const int64_t grid = asg.scales[s].grid;
      const int64_t raw_c = raw.shape().c;
      const auto field_index = [&](int j, int f, int64_t cy, int64_t cx) {
        return ((n * raw_c + j * fields_per_anchor() + f) * grid + cy) * grid +
               cx;
      };
      for (int j = 0; j < kAnchorsPerScale; ++j) {
        for (int64_t cy = 0; cy < grid; ++cy) {
          for (int64_t cx = 0; cx < grid; ++cx) {
            const int64_t slot = Assignment::slot(j, cy, cx, grid);
            const int64_t oi = field_index(j, 4, cy, cx);
            const double t_obj = raw.data()[oi];
            if (asg.scales[s].obj[slot]) {
              const BBox& gt = asg.gts[asg.scales[s].gt_index[slot]];
              sums.obj += inv_batch * bce(sigmoid_scalar(t_obj), 1.0);
              if (need_grad)
                grads[s][oi] += inv_batch * detail::bce_grad_logit(t_obj, 1.0);

              const int64_t xi = field_index(j, 0, cy, cx);
              const int64_t yi = field_index(j, 1, cy, cx);
              const int64_t wi = field_index(j, 2, cy, cx);
              const int64_t hi = field_index(j, 3, cy, cx);
              const double tx = raw.data()[xi], ty = raw.data()[yi];
              const double tw = raw.data()[wi], th = raw.data()[hi];
              const BBox pred =
                  decode_box(tx, ty, tw, th, grid, cx, cy,
                             scale_anchors[j].first, scale_anchors[j].second,
                             input_size);
              const double size_wt = 2.0 - gt.w * gt.h;
              const double coef = weights.lambda_coord * size_wt;
              CiouGrad g;
              double box_term;
              if (mode == BoxMode::kCiou) {
                box_term = coef * ciou_loss(pred, gt, need_grad ? &g : nullptr);
              } else {
                const double dx = pred.cx - gt.cx, dy = pred.cy - gt.cy;
                const double dw = pred.w - gt.w, dh = pred.h - gt.h;
                box_term = coef * (dx * dx + dy * dy + dw * dw + dh * dh);
                g = {2 * dx, 2 * dy, 2 * dw, 2 * dh};
              }
              sums.box += inv_batch * box_term;
              if (need_grad) {
                const double scale_g = inv_batch * coef;
                const double sx = sigmoid_scalar(tx), sy = sigmoid_scalar(ty);
                grads[s][xi] += scale_g * g.d_cx * sx * (1.0 - sx) / grid;
                grads[s][yi] += scale_g * g.d_cy * sy * (1.0 - sy) / grid;
                // straight-through at the tw/th clamp: the decoded size is
                // pinned but the pull-back gradient stays alive
                grads[s][wi] += scale_g * g.d_w * pred.w;
                grads[s][hi] += scale_g * g.d_h * pred.h;
              }

              for (int c = 0; c < kNumClasses; ++c) {
                const int64_t ci = field_index(j, 5 + c, cy, cx);
                const double target = (c == gt.class_id) ? 1.0 : 0.0;
                sums.cls += inv_batch * bce(sigmoid_scalar(raw.data()[ci]), target);
                if (need_grad)
                  grads[s][ci] +=
                      inv_batch * detail::bce_grad_logit(raw.data()[ci], target);
              }
            } else if (asg.scales[s].noobj[slot]) {
              sums.obj += inv_batch * weights.lambda_noobj *
                          bce(sigmoid_scalar(t_obj), 0.0);
              if (need_grad)
                grads[s][oi] += inv_batch * weights.lambda_noobj *
                                detail::bce_grad_logit(t_obj, 0.0);
            }
          }
        }
      }
    }
  }

  if (!std::isfinite(sums.box))
    throw std::runtime_error("total_loss: box component is not finite");
  if (!std::isfinite(sums.obj))
    throw std::runtime_error("total_loss: obj component is not finite");
  if (!std::isfinite(sums.cls))
    throw std::runtime_error("total_loss: cls component is not finite");
  sums.total = sums.box + sums.obj + sums.cls;

  auto n0 = raws.scales[0].node();
  auto n1 = raws.scales[1].node();
  auto n2 = raws.scales[2].node();
  Tensor total = Tensor::make_op(
      Shape{1, 1, 1, 1}, {sums.total},
      {raws.scales[0], raws.scales[1], raws.scales[2]},
      [n0, n1, n2, grads = std::move(grads)](detail::TensorNode& self) {
        const double g = self.grad[0];
        const std::array<std::shared_ptr<detail::TensorNode>, 3> nodes = {
            n0, n1, n2};
        for (int s = 0; s < 3; ++s) {
          if (!nodes[s]->requires_grad) continue;
          std::vector<double>& dst = detail::ensure_grad(*nodes[s]);
          for (size_t i = 0; i < dst.size(); ++i) dst[i] += g * grads[s][i];
        }
      });
  return {total, sums};
}

}  // namespace fsd
