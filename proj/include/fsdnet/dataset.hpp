#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fsdnet/rng.hpp"
#include "fsdnet/tensor.hpp"
#include "fsdnet/voc.hpp"

namespace fsd {

// Keeps frame indices 0, 3, 6, ... in order.
inline std::vector<std::string> subsample_frames(
    const std::vector<std::string>& frames, int keep_stride = 3) {
  if (keep_stride < 1)
    throw std::invalid_argument("subsample_frames: stride must be >= 1");
  std::vector<std::string> kept;
  for (size_t i = 0; i < frames.size(); i += keep_stride)
    kept.push_back(frames[i]);
  return kept;
}

// Union area of the annotated boxes over the image area; overlaps counted
// once via coordinate compression.
inline double object_proportion(const VocAnnotation& ann) {
  if (ann.objects.empty()) return 0.0;
  std::vector<int> xs, ys;
  for (const VocObject& o : ann.objects) {
    xs.push_back(o.xmin);
    xs.push_back(o.xmax);
    ys.push_back(o.ymin);
    ys.push_back(o.ymax);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  int64_t covered = 0;
  for (size_t i = 0; i + 1 < xs.size(); ++i)
    for (size_t j = 0; j + 1 < ys.size(); ++j) {
      for (const VocObject& o : ann.objects) {
        if (o.xmin <= xs[i] && xs[i + 1] <= o.xmax && o.ymin <= ys[j] &&
            ys[j + 1] <= o.ymax) {
          covered += int64_t(xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j]);
          break;
        }
      }
    }
  return static_cast<double>(covered) /
         (static_cast<double>(ann.width) * ann.height);
}

// Keep when the object proportion reaches the threshold (boundary inclusive).
inline bool proportion_keep(const VocAnnotation& ann, double min_ratio = 0.30) {
  return object_proportion(ann) >= min_ratio;
}

inline double luminance(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

// SNR in dB from the 3x3 Laplacian-difference noise estimate over luminance;
// a constant image has no noise estimate and reports +inf.
inline double snr_db(const Tensor& image) {
  const Shape s = image.shape();
  if (s.c != 3)
    throw std::invalid_argument("snr_db: expected 3-channel image, got " +
                                s.str());
  std::vector<double> lum(static_cast<size_t>(s.h * s.w));
  double sq_sum = 0.0;
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) {
      const double l = luminance(image.at(0, 0, y, x), image.at(0, 1, y, x),
                                 image.at(0, 2, y, x));
      lum[y * s.w + x] = l;
      sq_sum += l * l;
    }
  const double rms = std::sqrt(sq_sum / (s.h * s.w));
  if (s.h < 3 || s.w < 3) return std::numeric_limits<double>::infinity();

  double abs_sum = 0.0;
  for (int64_t y = 1; y + 1 < s.h; ++y)
    for (int64_t x = 1; x + 1 < s.w; ++x) {
      const double v = 4.0 * lum[y * s.w + x] -
                       2.0 * (lum[y * s.w + x - 1] + lum[y * s.w + x + 1] +
                              lum[(y - 1) * s.w + x] + lum[(y + 1) * s.w + x]) +
                       lum[(y - 1) * s.w + x - 1] + lum[(y - 1) * s.w + x + 1] +
                       lum[(y + 1) * s.w + x - 1] + lum[(y + 1) * s.w + x + 1];
      abs_sum += std::abs(v);
    }
  const double sigma = std::sqrt(3.14159265358979323846 / 2.0) * abs_sum /
                       (6.0 * (s.h - 2) * (s.w - 2));
  if (sigma <= 1e-12) return std::numeric_limits<double>::infinity();
  if (rms <= 0.0) return -std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(rms / sigma);
}

// Reject at or below the threshold, per the quoted inequality.
inline bool snr_keep(const Tensor& image, double thresh_db = 35.0) {
  return snr_db(image) > thresh_db;
}

// Fraction of pixels satisfying R > R_avg, G > G_avg, R > G > B — the
// fire-colored-background rule.
inline double fire_color_fraction(const Tensor& image) {
  const Shape s = image.shape();
  if (s.c != 3)
    throw std::invalid_argument("fire_color_fraction: expected 3 channels");
  double r_avg = 0.0, g_avg = 0.0;
  const int64_t count = s.h * s.w;
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) {
      r_avg += image.at(0, 0, y, x);
      g_avg += image.at(0, 1, y, x);
    }
  r_avg /= count;
  g_avg /= count;
  int64_t hits = 0;
  for (int64_t y = 0; y < s.h; ++y)
    for (int64_t x = 0; x < s.w; ++x) {
      const double r = image.at(0, 0, y, x);
      const double g = image.at(0, 1, y, x);
      const double b = image.at(0, 2, y, x);
      if (r > r_avg && g > g_avg && r > g && g > b) ++hits;
    }
  return static_cast<double>(hits) / count;
}

inline bool color_keep(const Tensor& image, double pixel_fraction_thresh = 0.5) {
  return fire_color_fraction(image) <= pixel_fraction_thresh;
}

struct FilterOptions {
  bool proportion_enabled = true;
  bool snr_enabled = true;
  bool color_enabled = true;
  double min_proportion = 0.30;
  double snr_thresh_db = 35.0;
  double color_fraction_thresh = 0.5;
};

struct FilterReport {
  int64_t input = 0;
  int64_t rejected_by_proportion = 0;
  int64_t rejected_by_snr = 0;
  int64_t rejected_by_color = 0;
  int64_t kept = 0;
  std::vector<std::pair<std::string, std::string>> reasons;  // name, verdict
};

struct DatasetEntry {
  std::string name;
  Tensor image;
  VocAnnotation annotation;
};

// Rules are pure predicates; rejection is attributed to the first failing
// rule in the order proportion, snr, color.
inline FilterReport filter_dataset(const std::vector<DatasetEntry>& entries,
                                   const FilterOptions& opt,
                                   std::vector<const DatasetEntry*>* kept_out =
                                       nullptr) {
  FilterReport report;
  report.input = static_cast<int64_t>(entries.size());
  for (const DatasetEntry& e : entries) {
    std::string verdict = "kept";
    if (opt.proportion_enabled &&
        !proportion_keep(e.annotation, opt.min_proportion)) {
      verdict = "rejected: object proportion below threshold";
      ++report.rejected_by_proportion;
    } else if (opt.snr_enabled && !snr_keep(e.image, opt.snr_thresh_db)) {
      verdict = "rejected: snr at or below threshold";
      ++report.rejected_by_snr;
    } else if (opt.color_enabled &&
               !color_keep(e.image, opt.color_fraction_thresh)) {
      verdict = "rejected: fire-colored background fraction above threshold";
      ++report.rejected_by_color;
    } else {
      ++report.kept;
      if (kept_out) kept_out->push_back(&e);
    }
    report.reasons.emplace_back(e.name, verdict);
  }
  return report;
}

struct ManifestSplits {
  std::vector<std::string> train, val, test;
};

// Deterministic shuffled split; no entry lands in two splits.
inline ManifestSplits build_manifest(std::vector<std::string> names,
                                     double train_ratio, double val_ratio,
                                     uint64_t seed) {
  if (train_ratio < 0 || val_ratio < 0 || train_ratio + val_ratio > 1.0)
    throw std::invalid_argument("build_manifest: bad split ratios");
  Rng rng(seed);
  for (size_t i = names.size(); i > 1; --i)
    std::swap(names[i - 1], names[rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
  ManifestSplits out;
  const size_t n_train = static_cast<size_t>(names.size() * train_ratio);
  const size_t n_val = static_cast<size_t>(names.size() * val_ratio);
  for (size_t i = 0; i < names.size(); ++i) {
    if (i < n_train)
      out.train.push_back(names[i]);
    else if (i < n_train + n_val)
      out.val.push_back(names[i]);
    else
      out.test.push_back(names[i]);
  }
  return out;
}

}  // namespace fsd
