#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fsdnet/rng.hpp"
#include "fsdnet/tensor.hpp"

namespace testutil {

inline fsd::Tensor random_tensor(fsd::Shape s, fsd::Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  std::vector<double> d(static_cast<size_t>(s.numel()));
  for (double& v : d) v = rng.uniform(lo, hi);
  return fsd::Tensor::from_data(s, std::move(d));
}

// Central finite difference of f() w.r.t. x[i], perturbing in place.
inline double central_diff(std::vector<double>& x, size_t i,
                           const std::function<double()>& f,
                           double step = 1e-3) {
  const double saved = x[i];
  x[i] = saved + step;
  const double fp = f();
  x[i] = saved - step;
  const double fm = f();
  x[i] = saved;
  return (fp - fm) / (2.0 * step);
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

// Max relative error between analytic gradient of `loss()` w.r.t. every
// element of `param` and central finite differences. `loss` must rebuild the
// graph from current parameter data on each call.
inline double max_grad_rel_err(fsd::Tensor param,
                               const std::function<fsd::Tensor()>& loss,
                               double step = 1e-3) {
  fsd::Tensor out = loss();
  param.zero_grad();
  out.backward();
  std::vector<double> analytic = param.grad();
  double worst = 0.0;
  for (size_t i = 0; i < param.data().size(); ++i) {
    const double fd = central_diff(param.data(), i,
                                   [&] { return loss().data()[0]; }, step);
    worst = std::max(worst, rel_err(analytic[i], fd));
  }
  return worst;
}

}  // namespace testutil
