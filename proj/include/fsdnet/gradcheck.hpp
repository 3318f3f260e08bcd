#pragma once

#include <string>
#include <vector>

#include "fsdnet/backbone.hpp"
#include "fsdnet/detector.hpp"
#include "fsdnet/loss.hpp"

namespace fsd {

struct GradcheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t skipped_nonsmooth = 0;  // kink inside the stencil at every step size
  bool pass = false;
  std::vector<std::pair<std::string, double>> per_tensor;
};

namespace detail {

// Micro-network for gradient verification: one dense layer, SPP, one head
// stack whose output conv is reused on pooled features to produce all three
// grids (8/4/2 on an 8x8 input, matching a 64-pixel image). The forward can
// record the branch decisions (leaky signs, pool argmaxes) so the checker can
// tell genuine gradient errors from finite differences straddling a kink.
struct GradcheckNet {
  ParamStore store;
  Tensor input;
  DenseLayer dense;
  std::array<ConvBnLeaky, 4> stack;
  Conv2dLayer out;
  AnchorSet anchors;
  std::vector<Assignment> assignments;
  int input_size = 64;

  explicit GradcheckNet(uint64_t seed) {
    Rng rng(seed);
    dense = DenseLayer(store, "dense", 4, 4, rng);
    stack[0] = ConvBnLeaky(store, "head.0", 32, 8, 1, 1, rng);
    stack[1] = ConvBnLeaky(store, "head.1", 8, 16, 3, 1, rng);
    stack[2] = ConvBnLeaky(store, "head.2", 16, 8, 1, 1, rng);
    stack[3] = ConvBnLeaky(store, "head.3", 8, 16, 3, 1, rng);
    out = Conv2dLayer(store, "head.out", 16, head_out_channels(), 1, 1, rng);
    input = Tensor(Shape{1, 4, 8, 8});
    for (double& v : input.data()) v = rng.uniform(-1.0, 1.0);
    input.set_requires_grad(true);
    anchors = default_anchors(input_size);
    BBox gt;
    gt.cx = 0.52;
    gt.cy = 0.41;
    gt.w = 0.45;
    gt.h = 0.38;
    gt.class_id = 1;
    assignments.push_back(assign_targets({gt}, anchors, {2, 4, 8}, input_size));
  }

  static void sign_of(const Tensor& t, std::vector<int32_t>* sig) {
    if (!sig) return;
    for (double v : t.data()) sig->push_back(v >= 0.0 ? 1 : -1);
  }

  static void pool_argmax(const Tensor& t, int k, int stride, int pad,
                          std::vector<int32_t>* sig) {
    if (!sig) return;
    const Shape s = t.shape();
    const int64_t oh = (s.h + 2 * pad - k) / stride + 1;
    const int64_t ow = (s.w + 2 * pad - k) / stride + 1;
    for (int64_t p = 0; p < s.n * s.c; ++p)
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox) {
          double best = -1e300;
          int32_t arg = -1;
          for (int64_t ky = 0; ky < k; ++ky) {
            const int64_t iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= s.h) continue;
            for (int64_t kx = 0; kx < k; ++kx) {
              const int64_t ix = ox * stride + kx - pad;
              if (ix < 0 || ix >= s.w) continue;
              const double v = t.data()[(p * s.h + iy) * s.w + ix];
              if (v > best) {
                best = v;
                arg = static_cast<int32_t>(iy * s.w + ix);
              }
            }
          }
          sig->push_back(arg);
        }
  }

  Tensor bn_leaky(const BatchNormLayer& bn, const Tensor& x,
                  std::vector<int32_t>* sig) const {
    Tensor normed = bn(x, true);
    sign_of(normed, sig);
    return leaky_relu(normed);
  }

  Tensor loss(BoxMode mode, std::vector<int32_t>* sig = nullptr) const {
    // dense layer: BN -> leaky -> 1x1 -> BN -> leaky -> 3x3, concat
    Tensor h = dense.bottleneck(bn_leaky(dense.bn1, input, sig));
    h = dense.conv(bn_leaky(dense.bn2, h, sig));
    Tensor x = concat_channels(input, h);

    pool_argmax(x, 5, 1, 2, sig);
    pool_argmax(x, 9, 1, 4, sig);
    pool_argmax(x, 13, 1, 6, sig);
    x = spp(x);
    for (const auto& layer : stack) {
      x = layer.conv(x);
      x = bn_leaky(layer.bn, x, sig);
    }
    pool_argmax(x, 2, 2, 0, sig);
    pool_argmax(x, 4, 4, 0, sig);
    RawPredictions raws;
    raws.scales[2] = out(x);
    raws.scales[1] = out(max_pool(x, 2, 2, 0));
    raws.scales[0] = out(max_pool(x, 4, 4, 0));
    loss_signature(raws, sig);
    return total_loss(raws, assignments, anchors, input_size, {}, mode).first;
  }

  // branch decisions inside the composite loss: CIoU corner picks, the
  // tw/th clamp, and the BCE probability clamps
  void loss_signature(const RawPredictions& raws,
                      std::vector<int32_t>* sig) const {
    if (!sig) return;
    const auto bce_zone = [&](double t) {
      const double p = sigmoid_scalar(t);
      return p <= 1e-7 ? -1 : (p >= 1.0 - 1e-7 ? 1 : 0);
    };
    for (int s = 0; s < 3; ++s) {
      const Tensor& raw = raws.scales[s];
      const auto sa = anchors.for_scale(s);
      const auto& asg = assignments[0].scales[s];
      for (int j = 0; j < kAnchorsPerScale; ++j)
        for (int64_t cy = 0; cy < asg.grid; ++cy)
          for (int64_t cx = 0; cx < asg.grid; ++cx) {
            const int64_t slot = Assignment::slot(j, cy, cx, asg.grid);
            const double tobj = raw_field(raw, 0, j, 4, cy, cx);
            if (asg.obj[slot]) {
              sig->push_back(bce_zone(tobj));
              for (int c = 0; c < kNumClasses; ++c)
                sig->push_back(bce_zone(raw_field(raw, 0, j, 5 + c, cy, cx)));
              const double tw = raw_field(raw, 0, j, 2, cy, cx);
              const double th = raw_field(raw, 0, j, 3, cy, cx);
              sig->push_back(std::abs(tw) < 10.0 ? 0 : (tw < 0 ? -1 : 1));
              sig->push_back(std::abs(th) < 10.0 ? 0 : (th < 0 ? -1 : 1));
              const BBox pred = decode_box(
                  raw_field(raw, 0, j, 0, cy, cx),
                  raw_field(raw, 0, j, 1, cy, cx), tw, th, asg.grid, cx, cy,
                  sa[j].first, sa[j].second, input_size);
              const BBox& gt = assignments[0].gts[asg.gt_index[slot]];
              const double d[4] = {
                  (pred.cx - pred.w / 2) - (gt.cx - gt.w / 2),
                  (pred.cx + pred.w / 2) - (gt.cx + gt.w / 2),
                  (pred.cy - pred.h / 2) - (gt.cy - gt.h / 2),
                  (pred.cy + pred.h / 2) - (gt.cy + gt.h / 2)};
              for (double v : d) sig->push_back(v > 0 ? 1 : -1);
              const double iw = std::min(pred.cx + pred.w / 2, gt.cx + gt.w / 2) -
                                std::max(pred.cx - pred.w / 2, gt.cx - gt.w / 2);
              const double ih = std::min(pred.cy + pred.h / 2, gt.cy + gt.h / 2) -
                                std::max(pred.cy - pred.h / 2, gt.cy - gt.h / 2);
              sig->push_back(iw > 0 ? 1 : -1);
              sig->push_back(ih > 0 ? 1 : -1);
            } else if (asg.noobj[slot]) {
              sig->push_back(bce_zone(tobj));
            }
          }
    }
  }
};

}  // namespace detail

// Central finite differences against the analytic gradients of total_loss
// through the micro-network, for every parameter and the input. The nominal
// step is 1e-3; coordinates whose stencil crosses a branch flip retry with a
// smaller step and are excluded only when the flip sits closer than the
// finest step.
inline GradcheckReport run_gradcheck(uint64_t seed = 20, double tol = 1e-4) {
  GradcheckReport report;
  for (BoxMode mode : {BoxMode::kCiou, BoxMode::kMse}) {
    detail::GradcheckNet net(seed);
    const std::string tag = mode == BoxMode::kCiou ? "ciou/" : "mse/";

    net.store.zero_grad();
    net.input.zero_grad();
    net.loss(mode).backward();

    auto check_tensor = [&](const std::string& name, Tensor t) {
      const std::vector<double> analytic =
          t.has_grad() ? t.grad() : std::vector<double>(t.data().size(), 0.0);
      double worst = 0.0;
      std::vector<double>& data = t.data();
      for (size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        const auto eval = [&](double delta, std::vector<int32_t>* sig) {
          data[i] = saved + delta;
          const double v = net.loss(mode, sig).data()[0];
          data[i] = saved;
          return v;
        };
        // near-zero gradients are compared against a 1e-4 floor; truncation
        // in the accepted difference must stay well under the tolerance at
        // the same scale
        bool resolved = false;
        for (const double h : {1e-3, 1.25e-4, 1e-5}) {
          std::vector<int32_t> sig_plus, sig_minus;
          const double fp = eval(h, &sig_plus);
          const double fm = eval(-h, &sig_minus);
          if (sig_plus != sig_minus) continue;  // kink inside the stencil
          const double fd = (fp - fm) / (2 * h);
          const double fd_half = (eval(h / 2, nullptr) -
                                  eval(-h / 2, nullptr)) / h;
          if (std::abs(fd - fd_half) >
              1.5e-4 * std::max({std::abs(fd), std::abs(fd_half), 1e-4}))
            continue;  // truncation too large at this step
          const double denom =
              std::max({std::abs(analytic[i]), std::abs(fd_half), 1e-4});
          worst = std::max(worst, std::abs(analytic[i] - fd_half) / denom);
          ++report.checked;
          resolved = true;
          break;
        }
        if (!resolved) ++report.skipped_nonsmooth;
      }
      report.per_tensor.emplace_back(tag + name, worst);
      report.max_rel_err = std::max(report.max_rel_err, worst);
    };

    for (auto& e : net.store.entries())
      if (e.trainable) check_tensor(e.name, e.tensor);
    check_tensor("input", net.input);
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace fsd
