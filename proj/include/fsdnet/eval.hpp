#pragma once

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fsdnet/box.hpp"

namespace fsd {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
};

struct ClassificationMetrics {
  ConfusionCounts counts;
  std::optional<double> fp_rate;  // FP/(FP+TN); empty when no negatives
  std::optional<double> fn_rate;  // FN/(FN+TP); empty when no positives
  double accuracy = 0.0;
};

inline ClassificationMetrics classification_metrics(
    const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.empty())
    throw std::invalid_argument("classification_metrics: empty input");
  if (pred.size() != truth.size())
    throw std::invalid_argument(
        "classification_metrics: prediction/truth size mismatch");
  ClassificationMetrics m;
  for (size_t i = 0; i < pred.size(); ++i) {
    if ((pred[i] != 0 && pred[i] != 1) || (truth[i] != 0 && truth[i] != 1))
      throw std::invalid_argument(
          "classification_metrics: labels must be 0 or 1");
    if (truth[i] == 1)
      (pred[i] == 1 ? m.counts.tp : m.counts.fn)++;
    else
      (pred[i] == 1 ? m.counts.fp : m.counts.tn)++;
  }
  if (m.counts.fp + m.counts.tn > 0)
    m.fp_rate = static_cast<double>(m.counts.fp) / (m.counts.fp + m.counts.tn);
  if (m.counts.fn + m.counts.tp > 0)
    m.fn_rate = static_cast<double>(m.counts.fn) / (m.counts.fn + m.counts.tp);
  m.accuracy = static_cast<double>(m.counts.tp + m.counts.tn) /
               static_cast<double>(m.counts.total());
  return m;
}

struct EvalDetection {
  int image = 0;
  int class_id = 0;
  double score = 0.0;
  BBox box;
};

struct EvalGroundTruth {
  int image = 0;
  int class_id = 0;
  BBox box;
};

struct MatchedDetections {
  std::vector<size_t> order;  // indices into the class's detections
  std::vector<char> is_tp;    // parallel to order
  int64_t num_gts = 0;
};

// Greedy VOC matching for one class: detections in descending score order
// (ties keep input order) each take the highest-IoU unmatched ground truth of
// their image when IoU clears the threshold; every ground truth matches once.
inline MatchedDetections match_detections(
    const std::vector<EvalDetection>& dets,
    const std::vector<EvalGroundTruth>& gts, double iou_thresh, int class_id) {
  MatchedDetections out;
  std::vector<size_t> det_idx;
  for (size_t i = 0; i < dets.size(); ++i)
    if (dets[i].class_id == class_id) det_idx.push_back(i);
  std::vector<size_t> gt_idx;
  for (size_t i = 0; i < gts.size(); ++i)
    if (gts[i].class_id == class_id) gt_idx.push_back(i);
  out.num_gts = static_cast<int64_t>(gt_idx.size());

  std::stable_sort(det_idx.begin(), det_idx.end(), [&](size_t a, size_t b) {
    return dets[a].score > dets[b].score;
  });
  std::vector<char> gt_used(gt_idx.size(), 0);
  for (size_t di : det_idx) {
    double best = 0.0;
    int best_gt = -1;
    for (size_t k = 0; k < gt_idx.size(); ++k) {
      if (gt_used[k] || gts[gt_idx[k]].image != dets[di].image) continue;
      const double i = iou(dets[di].box, gts[gt_idx[k]].box);
      if (i > best) {
        best = i;
        best_gt = static_cast<int>(k);
      }
    }
    const bool tp = best_gt >= 0 && best >= iou_thresh;
    if (tp) gt_used[best_gt] = 1;
    out.order.push_back(di);
    out.is_tp.push_back(tp ? 1 : 0);
  }
  return out;
}

enum class ApMode { kAllPoints, kElevenPoint };

// Interpolated average precision from TP flags in score order.
inline double voc_ap(const std::vector<char>& is_tp, int64_t num_gts,
                     ApMode mode = ApMode::kAllPoints) {
  if (num_gts <= 0)
    throw std::invalid_argument("voc_ap: needs at least one ground truth");
  std::vector<double> recall, precision;
  int64_t tp = 0, fp = 0;
  for (char f : is_tp) {
    (f ? tp : fp)++;
    recall.push_back(static_cast<double>(tp) / num_gts);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  if (mode == ApMode::kElevenPoint) {
    double acc = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      double best = 0.0;
      for (size_t i = 0; i < recall.size(); ++i)
        if (recall[i] >= t) best = std::max(best, precision[i]);
      acc += best;
    }
    return acc / 11.0;
  }
  // all-points: area under the precision envelope
  std::vector<double> mrec{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mrec.push_back(1.0);
  std::vector<double> mpre{0.0};
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mpre.push_back(0.0);
  for (size_t i = mpre.size() - 1; i > 0; --i)
    mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (size_t i = 0; i + 1 < mrec.size(); ++i)
    ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
  return ap;
}

struct ClassAp {
  int class_id = 0;
  double ap = 0.0;
  int64_t num_gts = 0;
};

struct MapResult {
  std::vector<ClassAp> per_class;
  double map = 0.0;
};

// Unweighted mean over classes that have ground truths.
inline MapResult evaluate_map(const std::vector<EvalDetection>& dets,
                              const std::vector<EvalGroundTruth>& gts,
                              double iou_thresh = 0.5,
                              ApMode mode = ApMode::kAllPoints) {
  MapResult out;
  double acc = 0.0;
  int counted = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    MatchedDetections matched = match_detections(dets, gts, iou_thresh, c);
    ClassAp entry;
    entry.class_id = c;
    entry.num_gts = matched.num_gts;
    if (matched.num_gts > 0) {
      entry.ap = voc_ap(matched.is_tp, matched.num_gts, mode);
      acc += entry.ap;
      ++counted;
    }
    out.per_class.push_back(entry);
  }
  if (counted == 0)
    throw std::invalid_argument("evaluate_map: no class has ground truths");
  out.map = acc / counted;
  return out;
}

}  // namespace fsd
