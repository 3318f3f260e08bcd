#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "fsdnet/tensor.hpp"

namespace fsd {

namespace detail {

inline int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
}

inline int64_t ceil_div(int64_t a, int64_t b) { return -floor_div(-a, b); }

}  // namespace detail

// Cross-correlation, weight [outC, inC, kh, kw], bias [1, outC, 1, 1].
// Output spatial size: floor((h + 2*pad - k) / stride) + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& weight,
                     const Tensor& bias, int stride, int pad) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  if (ws.h != ws.w || (ws.h != 1 && ws.h != 3))
    throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3, weight " +
                                ws.str());
  if (is.c != ws.c)
    throw std::invalid_argument("conv2d: input " + is.str() +
                                " does not match weight " + ws.str());
  if (bias.numel() != ws.n)
    throw std::invalid_argument("conv2d: bias " + bias.shape().str() +
                                " does not match weight " + ws.str());
  if (stride < 1 || pad < 0)
    throw std::invalid_argument("conv2d: bad stride/pad");
  const int64_t kh = ws.h, kw = ws.w;
  if (is.h + 2 * pad < kh || is.w + 2 * pad < kw)
    throw std::invalid_argument("conv2d: kernel exceeds padded input, input " +
                                is.str() + " weight " + ws.str());
  const int64_t oh = (is.h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (is.w + 2 * pad - kw) / stride + 1;
  const int64_t inC = is.c, outC = ws.n, ih = is.h, iw = is.w;

  std::vector<double> out(static_cast<size_t>(is.n * outC * oh * ow));
  const double* in = input.ptr();
  const double* w = weight.ptr();
  const double* b = bias.ptr();
  for (int64_t n = 0; n < is.n; ++n) {
    for (int64_t oc = 0; oc < outC; ++oc) {
      double* plane = out.data() + (n * outC + oc) * oh * ow;
      std::fill(plane, plane + oh * ow, b[oc]);
      for (int64_t ic = 0; ic < inC; ++ic) {
        const double* iplane = in + (n * inC + ic) * ih * iw;
        for (int64_t ky = 0; ky < kh; ++ky) {
          for (int64_t kx = 0; kx < kw; ++kx) {
            const double wv = w[((oc * inC + ic) * kh + ky) * kw + kx];
            const int64_t ox_lo =
                std::max<int64_t>(0, detail::ceil_div(pad - kx, stride));
            const int64_t ox_hi = std::min<int64_t>(
                ow - 1, detail::floor_div(iw - 1 + pad - kx, stride));
            for (int64_t oy = 0; oy < oh; ++oy) {
              const int64_t iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= ih) continue;
              const double* irow = iplane + iy * iw;
              double* orow = plane + oy * ow;
              for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                orow[ox] += wv * irow[ox * stride + kx - pad];
            }
          }
        }
      }
    }
  }

  auto inode = input.node();
  auto wnode = weight.node();
  auto bnode = bias.node();
  const int64_t N = is.n;
  return Tensor::make_op(
      Shape{N, outC, oh, ow}, std::move(out), {input, weight, bias},
      [=](detail::TensorNode& self) {
        const std::vector<double>& g = self.grad;
        if (bnode->requires_grad) {
          std::vector<double>& db = detail::ensure_grad(*bnode);
          for (int64_t n = 0; n < N; ++n)
            for (int64_t oc = 0; oc < outC; ++oc) {
              const double* gp = g.data() + (n * outC + oc) * oh * ow;
              double acc = 0.0;
              for (int64_t i = 0; i < oh * ow; ++i) acc += gp[i];
              db[oc] += acc;
            }
        }
        const bool need_w = wnode->requires_grad;
        const bool need_in = inode->requires_grad;
        if (!need_w && !need_in) return;
        if (need_w) detail::ensure_grad(*wnode);
        if (need_in) detail::ensure_grad(*inode);
        const double* in = inode->data.data();
        const double* w = wnode->data.data();
        for (int64_t n = 0; n < N; ++n) {
          for (int64_t oc = 0; oc < outC; ++oc) {
            const double* gp = g.data() + (n * outC + oc) * oh * ow;
            for (int64_t ic = 0; ic < inC; ++ic) {
              const double* iplane = in + (n * inC + ic) * ih * iw;
              double* diplane = need_in
                  ? inode->grad.data() + (n * inC + ic) * ih * iw
                  : nullptr;
              for (int64_t ky = 0; ky < kh; ++ky) {
                for (int64_t kx = 0; kx < kw; ++kx) {
                  const int64_t widx = ((oc * inC + ic) * kh + ky) * kw + kx;
                  const double wv = w[widx];
                  double dw_acc = 0.0;
                  const int64_t ox_lo =
                      std::max<int64_t>(0, detail::ceil_div(pad - kx, stride));
                  const int64_t ox_hi = std::min<int64_t>(
                      ow - 1, detail::floor_div(iw - 1 + pad - kx, stride));
                  for (int64_t oy = 0; oy < oh; ++oy) {
                    const int64_t iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= ih) continue;
                    const double* irow = iplane + iy * iw;
                    const double* grow = gp + oy * ow;
                    if (need_in) {
                      double* drow = diplane + iy * iw;
                      for (int64_t ox = ox_lo; ox <= ox_hi; ++ox) {
                        const int64_t ix = ox * stride + kx - pad;
                        dw_acc += grow[ox] * irow[ix];
                        drow[ix] += wv * grow[ox];
                      }
                    } else {
                      for (int64_t ox = ox_lo; ox <= ox_hi; ++ox)
                        dw_acc += grow[ox] * irow[ox * stride + kx - pad];
                    }
                  }
                  if (need_w) wnode->grad[widx] += dw_acc;
                }
              }
            }
          }
        }
      });
}

// Padding cells act as a -inf sentinel; gradient routes to the first argmax
// in scan order.
inline Tensor max_pool(const Tensor& input, int k, int stride, int pad) {
  const Shape is = input.shape();
  if (k < 1 || stride < 1 || pad < 0)
    throw std::invalid_argument("max_pool: bad kernel/stride/pad");
  if (pad >= k)
    throw std::invalid_argument("max_pool: pad must be smaller than kernel");
  if (is.h + 2 * pad < k || is.w + 2 * pad < k)
    throw std::invalid_argument("max_pool: window larger than padded input " +
                                is.str());
  const int64_t oh = (is.h + 2 * pad - k) / stride + 1;
  const int64_t ow = (is.w + 2 * pad - k) / stride + 1;
  const int64_t planes = is.n * is.c, ih = is.h, iw = is.w;

  std::vector<double> out(static_cast<size_t>(planes * oh * ow));
  std::vector<int64_t> argmax(out.size());
  const double* in = input.ptr();
  for (int64_t p = 0; p < planes; ++p) {
    const double* iplane = in + p * ih * iw;
    for (int64_t oy = 0; oy < oh; ++oy) {
      for (int64_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        int64_t best_idx = -1;
        for (int64_t ky = 0; ky < k; ++ky) {
          const int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= ih) continue;
          for (int64_t kx = 0; kx < k; ++kx) {
            const int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= iw) continue;
            const double v = iplane[iy * iw + ix];
            if (v > best) {
              best = v;
              best_idx = p * ih * iw + iy * iw + ix;
            }
          }
        }
        out[(p * oh + oy) * ow + ox] = best;
        argmax[(p * oh + oy) * ow + ox] = best_idx;
      }
    }
  }

  auto inode = input.node();
  return Tensor::make_op(
      Shape{is.n, is.c, oh, ow}, std::move(out), {input},
      [inode, argmax = std::move(argmax)](detail::TensorNode& self) {
        if (!inode->requires_grad) return;
        std::vector<double>& din = detail::ensure_grad(*inode);
        for (size_t i = 0; i < self.grad.size(); ++i)
          din[argmax[i]] += self.grad[i];
      });
}

inline Tensor upsample_nearest(const Tensor& input, int factor) {
  if (factor < 1)
    throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  const Shape is = input.shape();
  const int64_t f = factor, oh = is.h * f, ow = is.w * f;
  std::vector<double> out(static_cast<size_t>(is.n * is.c * oh * ow));
  const double* in = input.ptr();
  const int64_t planes = is.n * is.c;
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < oh; ++y) {
      const double* irow = in + (p * is.h + y / f) * is.w;
      double* orow = out.data() + (p * oh + y) * ow;
      for (int64_t x = 0; x < ow; ++x) orow[x] = irow[x / f];
    }

  auto inode = input.node();
  const int64_t ih = is.h, iw = is.w;
  return Tensor::make_op(
      Shape{is.n, is.c, oh, ow}, std::move(out), {input},
      [=](detail::TensorNode& self) {
        if (!inode->requires_grad) return;
        std::vector<double>& din = detail::ensure_grad(*inode);
        for (int64_t p = 0; p < planes; ++p)
          for (int64_t y = 0; y < oh; ++y) {
            const double* grow = self.grad.data() + (p * oh + y) * ow;
            double* drow = din.data() + (p * ih + y / f) * iw;
            for (int64_t x = 0; x < ow; ++x) drow[x / f] += grow[x];
          }
      });
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w)
    throw std::invalid_argument("concat_channels: mismatched shapes " +
                                as.str() + " vs " + bs.str());
  const int64_t hw = as.h * as.w, oc = as.c + bs.c;
  std::vector<double> out(static_cast<size_t>(as.n * oc * hw));
  for (int64_t n = 0; n < as.n; ++n) {
    std::copy_n(a.ptr() + n * as.c * hw, as.c * hw,
                out.data() + n * oc * hw);
    std::copy_n(b.ptr() + n * bs.c * hw, bs.c * hw,
                out.data() + (n * oc + as.c) * hw);
  }
  auto anode = a.node();
  auto bnode = b.node();
  const int64_t N = as.n, ac = as.c, bc = bs.c;
  return Tensor::make_op(
      Shape{N, oc, as.h, as.w}, std::move(out), {a, b},
      [=](detail::TensorNode& self) {
        for (int64_t n = 0; n < N; ++n) {
          const double* g = self.grad.data() + n * oc * hw;
          if (anode->requires_grad) {
            double* da = detail::ensure_grad(*anode).data() + n * ac * hw;
            for (int64_t i = 0; i < ac * hw; ++i) da[i] += g[i];
          }
          if (bnode->requires_grad) {
            double* db = detail::ensure_grad(*bnode).data() + n * bc * hw;
            for (int64_t i = 0; i < bc * hw; ++i) db[i] += g[ac * hw + i];
          }
        }
      });
}

inline Tensor slice_channels(const Tensor& input, int64_t c0, int64_t c1) {
  const Shape is = input.shape();
  if (c0 < 0 || c1 <= c0 || c1 > is.c)
    throw std::invalid_argument("slice_channels: range [" +
                                std::to_string(c0) + "," + std::to_string(c1) +
                                ") out of " + is.str());
  const int64_t hw = is.h * is.w, oc = c1 - c0;
  std::vector<double> out(static_cast<size_t>(is.n * oc * hw));
  for (int64_t n = 0; n < is.n; ++n)
    std::copy_n(input.ptr() + (n * is.c + c0) * hw, oc * hw,
                out.data() + n * oc * hw);
  auto inode = input.node();
  const int64_t N = is.n, ic = is.c;
  return Tensor::make_op(
      Shape{N, oc, is.h, is.w}, std::move(out), {input},
      [=](detail::TensorNode& self) {
        if (!inode->requires_grad) return;
        std::vector<double>& din = detail::ensure_grad(*inode);
        for (int64_t n = 0; n < N; ++n) {
          const double* g = self.grad.data() + n * oc * hw;
          double* d = din.data() + (n * ic + c0) * hw;
          for (int64_t i = 0; i < oc * hw; ++i) d[i] += g[i];
        }
      });
}

inline Tensor global_avg_pool(const Tensor& input) {
  const Shape is = input.shape();
  const int64_t hw = is.h * is.w, planes = is.n * is.c;
  std::vector<double> out(static_cast<size_t>(planes));
  const double* in = input.ptr();
  for (int64_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (int64_t i = 0; i < hw; ++i) acc += in[p * hw + i];
    out[p] = acc / static_cast<double>(hw);
  }
  auto inode = input.node();
  return Tensor::make_op(
      Shape{is.n, is.c, 1, 1}, std::move(out), {input},
      [=](detail::TensorNode& self) {
        if (!inode->requires_grad) return;
        std::vector<double>& din = detail::ensure_grad(*inode);
        const double inv = 1.0 / static_cast<double>(hw);
        for (int64_t p = 0; p < planes; ++p) {
          const double g = self.grad[p] * inv;
          for (int64_t i = 0; i < hw; ++i) din[p * hw + i] += g;
        }
      });
}

// Affine map on [n, c, 1, 1]; weight [outC, inC, 1, 1], bias [1, outC, 1, 1].
inline Tensor dense_fc(const Tensor& input, const Tensor& weight,
                       const Tensor& bias) {
  const Shape is = input.shape(), ws = weight.shape();
  if (is.h != 1 || is.w != 1)
    throw std::invalid_argument("dense_fc: input must be n x c x 1 x 1, got " +
                                is.str());
  if (ws.c != is.c || ws.h != 1 || ws.w != 1)
    throw std::invalid_argument("dense_fc: input " + is.str() +
                                " does not match weight " + ws.str());
  if (bias.numel() != ws.n)
    throw std::invalid_argument("dense_fc: bias " + bias.shape().str() +
                                " does not match weight " + ws.str());
  const int64_t N = is.n, inC = is.c, outC = ws.n;
  std::vector<double> out(static_cast<size_t>(N * outC));
  const double* x = input.ptr();
  const double* w = weight.ptr();
  const double* b = bias.ptr();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < outC; ++o) {
      double acc = b[o];
      for (int64_t i = 0; i < inC; ++i) acc += w[o * inC + i] * x[n * inC + i];
      out[n * outC + o] = acc;
    }
  auto inode = input.node();
  auto wnode = weight.node();
  auto bnode = bias.node();
  return Tensor::make_op(
      Shape{N, outC, 1, 1}, std::move(out), {input, weight, bias},
      [=](detail::TensorNode& self) {
        const double* g = self.grad.data();
        const double* x = inode->data.data();
        const double* w = wnode->data.data();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t o = 0; o < outC; ++o) {
            const double go = g[n * outC + o];
            if (bnode->requires_grad) detail::ensure_grad(*bnode)[o] += go;
            for (int64_t i = 0; i < inC; ++i) {
              if (wnode->requires_grad)
                detail::ensure_grad(*wnode)[o * inC + i] += go * x[n * inC + i];
              if (inode->requires_grad)
                detail::ensure_grad(*inode)[n * inC + i] += go * w[o * inC + i];
            }
          }
      });
}

inline Tensor leaky_relu(const Tensor& input, double slope = 0.1) {
  std::vector<double> out(input.data());
  for (double& v : out)
    if (v < 0.0) v *= slope;
  auto inode = input.node();
  return Tensor::make_op(
      input.shape(), std::move(out), {input},
      [inode, slope](detail::TensorNode& self) {
        if (!inode->requires_grad) return;
        std::vector<double>& din = detail::ensure_grad(*inode);
        const double* x = inode->data.data();
        for (size_t i = 0; i < self.grad.size(); ++i)
          din[i] += self.grad[i] * (x[i] >= 0.0 ? 1.0 : slope);
      });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& input) {
  std::vector<double> out(input.data());
  for (double& v : out) v = sigmoid_scalar(v);
  auto inode = input.node();
  return Tensor::make_op(
      input.shape(), std::move(out), {input},
      [inode](detail::TensorNode& self) {
        if (!inode->requires_grad) return;
        std::vector<double>& din = detail::ensure_grad(*inode);
        for (size_t i = 0; i < self.grad.size(); ++i) {
          const double y = self.data[i];
          din[i] += self.grad[i] * y * (1.0 - y);
        }
      });
}

// Training mode normalizes with per-channel batch moments over N*H*W (biased
// variance) and updates the running buffers in place; inference mode uses the
// running buffers as constants.
inline Tensor batch_norm(const Tensor& input, const Tensor& gamma,
                         const Tensor& beta, Tensor& running_mean,
                         Tensor& running_var, bool training,
                         double eps = 1e-5, double momentum = 0.9) {
  const Shape is = input.shape();
  const int64_t C = is.c;
  if (gamma.numel() != C || beta.numel() != C || running_mean.numel() != C ||
      running_var.numel() != C)
    throw std::invalid_argument("batch_norm: parameter size does not match " +
                                is.str());
  const int64_t hw = is.h * is.w;
  const int64_t m = is.n * hw;
  const double* x = input.ptr();

  std::vector<double> mean(C), inv_std(C);
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t n = 0; n < is.n; ++n) {
        const double* p = x + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) acc += p[i];
      }
      const double mu = acc / static_cast<double>(m);
      double var = 0.0;
      for (int64_t n = 0; n < is.n; ++n) {
        const double* p = x + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      var /= static_cast<double>(m);
      mean[c] = mu;
      inv_std[c] = 1.0 / std::sqrt(var + eps);
      running_mean.data()[c] = momentum * running_mean.data()[c] +
                               (1.0 - momentum) * mu;
      running_var.data()[c] = momentum * running_var.data()[c] +
                              (1.0 - momentum) * var;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      inv_std[c] = 1.0 / std::sqrt(running_var.data()[c] + eps);
    }
  }

  std::vector<double> out(input.data().size());
  const double* gm = gamma.ptr();
  const double* bt = beta.ptr();
  for (int64_t n = 0; n < is.n; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* p = x + (n * C + c) * hw;
      double* o = out.data() + (n * C + c) * hw;
      const double a = gm[c] * inv_std[c];
      const double b = bt[c] - a * mean[c];
      for (int64_t i = 0; i < hw; ++i) o[i] = a * p[i] + b;
    }

  auto inode = input.node();
  auto gnode = gamma.node();
  auto bnode = beta.node();
  const int64_t N = is.n;
  return Tensor::make_op(
      is, std::move(out), {input, gamma, beta},
      [=, mean = std::move(mean),
       inv_std = std::move(inv_std)](detail::TensorNode& self) {
        const double* x = inode->data.data();
        const double* gm = gnode->data.data();
        const std::vector<double>& g = self.grad;
        for (int64_t c = 0; c < C; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const double* gp = g.data() + (n * C + c) * hw;
            const double* xp = x + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              sum_dy += gp[i];
              sum_dy_xhat += gp[i] * (xp[i] - mean[c]) * inv_std[c];
            }
          }
          if (gnode->requires_grad)
            detail::ensure_grad(*gnode)[c] += sum_dy_xhat;
          if (bnode->requires_grad) detail::ensure_grad(*bnode)[c] += sum_dy;
          if (inode->requires_grad) {
            std::vector<double>& din = detail::ensure_grad(*inode);
            const double a = gm[c] * inv_std[c];
            if (training) {
              const double inv_m = 1.0 / static_cast<double>(m);
              for (int64_t n = 0; n < N; ++n) {
                const double* gp = g.data() + (n * C + c) * hw;
                const double* xp = x + (n * C + c) * hw;
                double* dp = din.data() + (n * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) {
                  const double xhat = (xp[i] - mean[c]) * inv_std[c];
                  dp[i] += a * (gp[i] - inv_m * sum_dy -
                                xhat * inv_m * sum_dy_xhat);
                }
              }
            } else {
              for (int64_t n = 0; n < N; ++n) {
                const double* gp = g.data() + (n * C + c) * hw;
                double* dp = din.data() + (n * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) dp[i] += a * gp[i];
              }
            }
          }
        }
      });
}

inline Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (double v : input.data()) acc += v;
  auto inode = input.node();
  return Tensor::make_op(
      Shape{1, 1, 1, 1}, {acc}, {input}, [inode](detail::TensorNode& self) {
        if (!inode->requires_grad) return;
        std::vector<double>& din = detail::ensure_grad(*inode);
        for (double& d : din) d += self.grad[0];
      });
}

}  // namespace fsd
