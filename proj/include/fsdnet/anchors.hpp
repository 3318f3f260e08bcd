#pragma once

#include <algorithm>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fsdnet/box.hpp"
#include "fsdnet/detector.hpp"
#include "fsdnet/rng.hpp"

namespace fsd {

inline double mean_best_iou(
    const std::vector<std::pair<double, double>>& shapes,
    const std::vector<std::pair<double, double>>& centroids) {
  double acc = 0.0;
  for (const auto& [w, h] : shapes) {
    double best = 0.0;
    for (const auto& [cw, ch] : centroids)
      best = std::max(best, shape_iou(w, h, cw, ch));
    acc += best;
  }
  return acc / static_cast<double>(shapes.size());
}

// k-means over (w,h) shapes with 1 - IoU distance; fixed seed, mean update,
// stops on convergence or after max_iters.
inline std::vector<std::pair<double, double>> kmeans_shapes(
    const std::vector<std::pair<double, double>>& shapes, int k, uint64_t seed,
    int max_iters = 100) {
  if (shapes.empty())
    throw std::invalid_argument("kmeans_shapes: no shapes given");
  if (k < 1) throw std::invalid_argument("kmeans_shapes: k must be >= 1");
  for (const auto& [w, h] : shapes)
    if (w <= 0.0 || h <= 0.0)
      throw std::invalid_argument("kmeans_shapes: shapes must be positive");

  Rng rng(seed);
  std::vector<std::pair<double, double>> centroids;
  for (int i = 0; i < k; ++i)
    centroids.push_back(
        shapes[rng.uniform_int(0, static_cast<int64_t>(shapes.size()) - 1)]);

  std::vector<int> owner(shapes.size(), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < shapes.size(); ++i) {
      int best = 0;
      double best_iou = -1.0;
      for (int c = 0; c < k; ++c) {
        const double v = shape_iou(shapes[i].first, shapes[i].second,
                                   centroids[c].first, centroids[c].second);
        if (v > best_iou) {
          best_iou = v;
          best = c;
        }
      }
      if (owner[i] != best) {
        owner[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    for (int c = 0; c < k; ++c) {
      double sw = 0.0, sh = 0.0;
      int64_t count = 0;
      for (size_t i = 0; i < shapes.size(); ++i)
        if (owner[i] == c) {
          sw += shapes[i].first;
          sh += shapes[i].second;
          ++count;
        }
      if (count > 0) {
        centroids[c] = {sw / count, sh / count};
      } else {
        centroids[c] =
            shapes[rng.uniform_int(0, static_cast<int64_t>(shapes.size()) - 1)];
      }
    }
  }
  std::stable_sort(centroids.begin(), centroids.end(),
                   [](const auto& a, const auto& b) {
                     return a.first * a.second < b.first * b.second;
                   });
  return centroids;
}

inline AnchorSet anchor_set_from_shapes(
    const std::vector<std::pair<double, double>>& shapes) {
  if (shapes.size() != 9)
    throw std::invalid_argument("anchors: exactly 9 shapes required, got " +
                                std::to_string(shapes.size()));
  AnchorSet set;
  std::copy(shapes.begin(), shapes.end(), set.anchors.begin());
  set.validate();
  return set;
}

}  // namespace fsd
