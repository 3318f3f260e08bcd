#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "fsdnet/augment.hpp"
#include "fsdnet/dataset.hpp"
#include "fsdnet/image_io.hpp"
#include "fsdnet/model.hpp"

namespace fsd {

struct TrainSample {
  std::string name;
  Sample sample;     // image resized to the network input, boxes normalized
  int fire_label = 0;  // any annotated object marks a fire scene
};

// Manifest: one image path per line, relative to the manifest's directory;
// the VOC annotation sits next to each image with an .xml extension.
inline std::vector<TrainSample> load_training_set(const std::string& manifest,
                                                  int input_size) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("train: cannot open manifest " + manifest);
  const std::filesystem::path base =
      std::filesystem::path(manifest).parent_path();
  std::vector<TrainSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::filesystem::path img_path = base / line;
    std::filesystem::path xml_path = img_path;
    xml_path.replace_extension(".xml");
    TrainSample ts;
    ts.name = img_path.stem().string();
    Tensor img = read_ppm(img_path.string());
    if (img.shape().h != input_size || img.shape().w != input_size)
      img = resize_nearest(img, input_size, input_size);
    ts.sample.image = img;
    if (std::filesystem::exists(xml_path)) {
      const VocAnnotation ann = read_voc_xml(xml_path.string());
      ts.sample.boxes = annotation_boxes(ann);
    }
    ts.fire_label = ts.sample.boxes.empty() ? 0 : 1;
    out.push_back(std::move(ts));
  }
  if (out.empty())
    throw std::runtime_error("train: manifest " + manifest + " is empty");
  return out;
}

struct StepLog {
  int step = 0;
  LossBreakdown parts;
};

inline std::string format_step_log(const StepLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d %.6f %.6f %.6f %.6f", log.step,
                log.parts.total, log.parts.box, log.parts.obj, log.parts.cls);
  return buf;
}

// SGD with momentum over the manifest. Batch slots walk the dataset
// round-robin; with probability mosaic_prob a slot becomes a four-image
// mosaic seeded from the shared stream. The classification head trains
// jointly on scene labels; the logged breakdown is the detection objective.
inline std::vector<StepLog> train_model(FsdNetModel& model,
                                        const std::vector<TrainSample>& data,
                                        std::ostream* log_stream = nullptr) {
  const RunConfig& cfg = model.cfg;
  if (data.empty()) throw std::runtime_error("train: no training samples");
  const int S = cfg.input_size;
  const int B = cfg.batch_size;
  Rng rng(cfg.seed);
  SgdOptimizer opt(model.store, cfg.lr, cfg.momentum, cfg.grad_clip);
  const MosaicConfig mosaic_cfg = cfg.mosaic_config();
  const std::array<int64_t, 3> grids = model.grid_sizes();

  std::vector<StepLog> logs;
  for (int step = 0; step < cfg.steps; ++step) {
    if (cfg.lr_schedule == "cosine")
      opt.set_lr(cfg.lr * 0.5 *
                 (1.0 + std::cos(3.14159265358979323846 * step / cfg.steps)));
    Tensor batch(Shape{B, 3, S, S});
    std::vector<Assignment> assignments;
    std::vector<int> labels;
    for (int i = 0; i < B; ++i) {
      const size_t base = (static_cast<size_t>(step) * B + i) % data.size();
      Sample slot;
      if (rng.bernoulli(cfg.mosaic_prob)) {
        std::vector<Sample> four = {data[base].sample};
        for (int k = 0; k < 3; ++k)
          four.push_back(
              data[rng.uniform_int(0, static_cast<int64_t>(data.size()) - 1)]
                  .sample);
        slot = mosaic(four, mosaic_cfg, rng);
      } else {
        slot = data[base].sample;
      }
      std::copy(slot.image.data().begin(), slot.image.data().end(),
                batch.data().begin() + static_cast<size_t>(i) * 3 * S * S);
      assignments.push_back(assign_targets(slot.boxes, model.anchors, grids, S,
                                           cfg.ignore_threshold));
      labels.push_back(slot.boxes.empty() ? 0 : 1);
    }

    FeatureTaps taps = model.backbone.forward(batch, true);
    RawPredictions raws = model.heads.forward(taps, true);
    auto [total, parts] =
        total_loss(raws, assignments, model.anchors, S, cfg.loss_weights(),
                   cfg.box_mode_enum());
    Tensor cls_loss =
        classifier_batch_loss(model.classifier(taps.small), labels);

    model.store.zero_grad();
    total.backward();
    cls_loss.backward();
    opt.step();

    StepLog log{step + 1, parts};
    logs.push_back(log);
    if (log_stream) *log_stream << format_step_log(log) << "\n";
  }
  return logs;
}

}  // namespace fsd
