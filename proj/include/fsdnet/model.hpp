#pragma once

#include <fstream>
#include <memory>
#include <string>

#include "fsdnet/anchors.hpp"
#include "fsdnet/backbone.hpp"
#include "fsdnet/checkpoint.hpp"
#include "fsdnet/classifier.hpp"
#include "fsdnet/config.hpp"
#include "fsdnet/detector.hpp"

namespace fsd {

// The complete network: shared dense-connection backbone feeding the
// classification head and the three-scale detection heads.
struct FsdNetModel {
  RunConfig cfg;
  ParamStore store;
  Backbone backbone;
  ClassifierHead classifier;
  DetectionHeads heads;
  AnchorSet anchors;

  static FsdNetModel build(const RunConfig& cfg) {
    cfg.validate();
    FsdNetModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);
    m.backbone = Backbone(m.store, cfg.backbone_config(), rng);
    m.classifier = ClassifierHead(m.store, "classifier",
                                  static_cast<int>(m.backbone.small_channels()),
                                  rng);
    m.heads = DetectionHeads(m.store, "detector", m.backbone.large_channels(),
                             m.backbone.mid_channels(),
                             m.backbone.small_channels(),
                             cfg.detector_config(), rng);
    if (cfg.anchors_source == "file") {
      m.anchors = load_anchors_file(cfg.anchors_file);
    } else {
      m.anchors = default_anchors(cfg.input_size);
    }
    return m;
  }

  RawPredictions forward_detector(const Tensor& image, bool training) const {
    return heads.forward(backbone.forward(image, training), training);
  }

  std::vector<Detection> detect(const Tensor& image,
                                int64_t batch_index = 0) const {
    RawPredictions raws = forward_detector(image, false);
    std::vector<Detection> dets =
        decode_all(raws, anchors, cfg.input_size, cfg.confidence_threshold,
                   batch_index);
    return nms(dets, cfg.nms_iou_threshold);
  }

  double classify(const Tensor& image) const {
    FeatureTaps taps = backbone.forward(image, false);
    return classifier(taps.small).data()[0];
  }

  std::array<int64_t, 3> grid_sizes() const {
    return {cfg.input_size / 32, cfg.input_size / 16, cfg.input_size / 8};
  }

  void save(const std::string& path) const { save_checkpoint(store, path); }
  void load(const std::string& path) { load_checkpoint(store, path); }

  // one `w h` pair per line, pixels, sorted by area
  static AnchorSet load_anchors_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("anchors: cannot open " + path);
    std::vector<std::pair<double, double>> shapes;
    double w, h;
    while (in >> w >> h) shapes.emplace_back(w, h);
    return anchor_set_from_shapes(shapes);
  }

  static void save_anchors_file(const AnchorSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("anchors: cannot write " + path);
    for (const auto& [w, h] : set.anchors) out << w << " " << h << "\n";
  }
};

}  // namespace fsd
