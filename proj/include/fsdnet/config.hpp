#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <array>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "fsdnet/augment.hpp"
#include "fsdnet/backbone.hpp"
#include "fsdnet/detector.hpp"
#include "fsdnet/loss.hpp"

namespace fsd {

// Effective run configuration: INI sections with key = value pairs, preset
// defaults filled in at parse time, unknown keys rejected. Command-line flags
// override file values.
struct RunConfig {
  // [model]
  std::string preset = "desk";  // desk | paper
  int input_size = 64;
  int stem_channels = 16;
  int growth_rate = 8;
  std::array<int, 3> block_layers = {4, 4, 4};
  int head_channels = 32;
  int route_channels = 32;

  // [detect]
  double confidence_threshold = 0.25;
  double nms_iou_threshold = 0.45;

  // [loss]
  double lambda_coord = 5.0;
  double lambda_noobj = 0.5;
  std::string box_mode = "ciou";  // ciou | mse
  double ignore_threshold = 0.5;

  // [train]
  double lr = 0.01;
  std::string lr_schedule = "constant";  // constant | cosine
  double grad_clip = 0.0;                // element-wise bound, 0 disables
  double momentum = 0.9;
  int steps = 300;
  int batch_size = 4;
  double mosaic_prob = 1.0;
  uint64_t seed = 1;

  // [anchors]
  std::string anchors_source = "default";  // default | file
  std::string anchors_file;

  // [mosaic]
  double mosaic_jitter_lo = 0.3, mosaic_jitter_hi = 0.7;
  double mosaic_scale_lo = 1.0, mosaic_scale_hi = 1.5;
  double mosaic_flip_prob = 0.5;
  double mosaic_brightness = 0.1;
  double mosaic_saturation = 0.2;
  double mosaic_hue = 0.05;
  int mosaic_min_box_pixels = 2;

  void apply_preset() {
    if (preset == "desk") {
      input_size = 64;
      stem_channels = 16;
      growth_rate = 8;
      block_layers = {4, 4, 4};
      head_channels = 32;
      route_channels = 32;
    } else if (preset == "paper") {
      input_size = 416;
      stem_channels = 64;
      growth_rate = 32;
      block_layers = {10, 10, 80};
      head_channels = 128;
      route_channels = 128;
    } else {
      throw std::invalid_argument("config: unknown preset '" + preset + "'");
    }
  }

  void validate() const {
    if (preset != "desk" && preset != "paper")
      throw std::invalid_argument("config: unknown preset '" + preset + "'");
    if (box_mode != "ciou" && box_mode != "mse")
      throw std::invalid_argument("config: box_mode must be ciou or mse");
    if (input_size < 32 || input_size % 32 != 0)
      throw std::invalid_argument("config: input_size must be a multiple of 32");
    if (confidence_threshold < 0 || confidence_threshold >= 1 ||
        nms_iou_threshold <= 0 || nms_iou_threshold >= 1 ||
        ignore_threshold <= 0 || ignore_threshold >= 1)
      throw std::invalid_argument("config: thresholds must lie in (0,1)");
    if (lambda_coord <= 0 || lambda_noobj <= 0)
      throw std::invalid_argument("config: loss weights must be positive");
    if (lr <= 0 || momentum < 0 || momentum >= 1)
      throw std::invalid_argument("config: bad optimizer settings");
    if (lr_schedule != "cosine" && lr_schedule != "constant")
      throw std::invalid_argument("config: lr_schedule must be cosine or constant");
    if (grad_clip < 0.0)
      throw std::invalid_argument("config: grad_clip must be >= 0");
    if (steps < 0 || batch_size < 1)
      throw std::invalid_argument("config: bad train settings");
    if (mosaic_prob < 0 || mosaic_prob > 1)
      throw std::invalid_argument("config: mosaic_prob must lie in [0,1]");
    if (anchors_source != "default" && anchors_source != "file")
      throw std::invalid_argument("config: anchors_source must be default or file");
  }

  BackboneConfig backbone_config() const {
    BackboneConfig c;
    c.stem_channels = stem_channels;
    c.growth_rate = growth_rate;
    c.layers_per_block = block_layers;
    c.input_size = input_size;
    return c;
  }

  DetectorConfig detector_config() const {
    return {head_channels, route_channels};
  }

  LossWeights loss_weights() const { return {lambda_coord, lambda_noobj}; }

  BoxMode box_mode_enum() const {
    return box_mode == "mse" ? BoxMode::kMse : BoxMode::kCiou;
  }

  MosaicConfig mosaic_config() const {
    MosaicConfig m;
    m.out_size = input_size;
    m.jitter_lo = mosaic_jitter_lo;
    m.jitter_hi = mosaic_jitter_hi;
    m.scale_lo = mosaic_scale_lo;
    m.scale_hi = mosaic_scale_hi;
    m.flip_prob = mosaic_flip_prob;
    m.brightness = mosaic_brightness;
    m.saturation = mosaic_saturation;
    m.hue = mosaic_hue;
    m.min_box_pixels = mosaic_min_box_pixels;
    return m;
  }

  std::string to_ini() const;

  static RunConfig parse_ini_text(const std::string& text);
  static RunConfig parse_ini_file(const std::string& path);
};

namespace detail {

inline const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "model.preset", "model.input_size", "model.stem_channels",
      "model.growth_rate", "model.block_layers", "model.head_channels",
      "model.route_channels",
      "detect.confidence_threshold", "detect.nms_iou_threshold",
      "loss.lambda_coord", "loss.lambda_noobj", "loss.box_mode",
      "loss.ignore_threshold",
      "train.lr", "train.lr_schedule", "train.grad_clip", "train.momentum",
      "train.steps", "train.batch_size",
      "train.mosaic_prob", "train.seed",
      "anchors.source", "anchors.file",
      "mosaic.jitter_lo", "mosaic.jitter_hi", "mosaic.scale_lo",
      "mosaic.scale_hi", "mosaic.flip_prob", "mosaic.brightness",
      "mosaic.saturation", "mosaic.hue", "mosaic.min_box_pixels",
  };
  return keys;
}

inline RunConfig config_from_tree(const boost::property_tree::ptree& tree) {
  for (const auto& [section, child] : tree) {
    if (child.empty())
      throw std::invalid_argument("config: stray key '" + section +
                                  "' outside a section");
    for (const auto& [key, value] : child) {
      if (!known_config_keys().count(section + "." + key))
        throw std::invalid_argument("config: unknown key '" + section + "." +
                                    key + "'");
    }
  }
  RunConfig cfg;
  cfg.preset = tree.get<std::string>("model.preset", cfg.preset);
  cfg.apply_preset();

  const auto geti = [&](const char* key, int cur) {
    return tree.get<int>(key, cur);
  };
  const auto getd = [&](const char* key, double cur) {
    return tree.get<double>(key, cur);
  };
  cfg.input_size = geti("model.input_size", cfg.input_size);
  cfg.stem_channels = geti("model.stem_channels", cfg.stem_channels);
  cfg.growth_rate = geti("model.growth_rate", cfg.growth_rate);
  if (auto layers = tree.get_optional<std::string>("model.block_layers")) {
    std::istringstream is(*layers);
    char comma;
    if (!(is >> cfg.block_layers[0] >> comma >> cfg.block_layers[1] >> comma >>
          cfg.block_layers[2]))
      throw std::invalid_argument("config: block_layers must be 'a,b,c'");
  }
  cfg.head_channels = geti("model.head_channels", cfg.head_channels);
  cfg.route_channels = geti("model.route_channels", cfg.route_channels);
  cfg.confidence_threshold =
      getd("detect.confidence_threshold", cfg.confidence_threshold);
  cfg.nms_iou_threshold = getd("detect.nms_iou_threshold", cfg.nms_iou_threshold);
  cfg.lambda_coord = getd("loss.lambda_coord", cfg.lambda_coord);
  cfg.lambda_noobj = getd("loss.lambda_noobj", cfg.lambda_noobj);
  cfg.box_mode = tree.get<std::string>("loss.box_mode", cfg.box_mode);
  cfg.ignore_threshold = getd("loss.ignore_threshold", cfg.ignore_threshold);
  cfg.lr = getd("train.lr", cfg.lr);
  cfg.lr_schedule = tree.get<std::string>("train.lr_schedule", cfg.lr_schedule);
  cfg.grad_clip = getd("train.grad_clip", cfg.grad_clip);
  cfg.momentum = getd("train.momentum", cfg.momentum);
  cfg.steps = geti("train.steps", cfg.steps);
  cfg.batch_size = geti("train.batch_size", cfg.batch_size);
  cfg.mosaic_prob = getd("train.mosaic_prob", cfg.mosaic_prob);
  cfg.seed = tree.get<uint64_t>("train.seed", cfg.seed);
  cfg.anchors_source = tree.get<std::string>("anchors.source", cfg.anchors_source);
  cfg.anchors_file = tree.get<std::string>("anchors.file", cfg.anchors_file);
  cfg.mosaic_jitter_lo = getd("mosaic.jitter_lo", cfg.mosaic_jitter_lo);
  cfg.mosaic_jitter_hi = getd("mosaic.jitter_hi", cfg.mosaic_jitter_hi);
  cfg.mosaic_scale_lo = getd("mosaic.scale_lo", cfg.mosaic_scale_lo);
  cfg.mosaic_scale_hi = getd("mosaic.scale_hi", cfg.mosaic_scale_hi);
  cfg.mosaic_flip_prob = getd("mosaic.flip_prob", cfg.mosaic_flip_prob);
  cfg.mosaic_brightness = getd("mosaic.brightness", cfg.mosaic_brightness);
  cfg.mosaic_saturation = getd("mosaic.saturation", cfg.mosaic_saturation);
  cfg.mosaic_hue = getd("mosaic.hue", cfg.mosaic_hue);
  cfg.mosaic_min_box_pixels =
      geti("mosaic.min_box_pixels", cfg.mosaic_min_box_pixels);
  cfg.validate();
  return cfg;
}

}  // namespace detail

inline std::string RunConfig::to_ini() const {
  std::ostringstream os;
  os << "[model]\n"
     << "preset = " << preset << "\n"
     << "input_size = " << input_size << "\n"
     << "stem_channels = " << stem_channels << "\n"
     << "growth_rate = " << growth_rate << "\n"
     << "block_layers = " << block_layers[0] << "," << block_layers[1] << ","
     << block_layers[2] << "\n"
     << "head_channels = " << head_channels << "\n"
     << "route_channels = " << route_channels << "\n"
     << "[detect]\n"
     << "confidence_threshold = " << confidence_threshold << "\n"
     << "nms_iou_threshold = " << nms_iou_threshold << "\n"
     << "[loss]\n"
     << "lambda_coord = " << lambda_coord << "\n"
     << "lambda_noobj = " << lambda_noobj << "\n"
     << "box_mode = " << box_mode << "\n"
     << "ignore_threshold = " << ignore_threshold << "\n"
     << "[train]\n"
     << "lr = " << lr << "\n"
     << "lr_schedule = " << lr_schedule << "\n"
     << "grad_clip = " << grad_clip << "\n"
     << "momentum = " << momentum << "\n"
     << "steps = " << steps << "\n"
     << "batch_size = " << batch_size << "\n"
     << "mosaic_prob = " << mosaic_prob << "\n"
     << "seed = " << seed << "\n"
     << "[anchors]\n"
     << "source = " << anchors_source << "\n";
  if (!anchors_file.empty()) os << "file = " << anchors_file << "\n";
  os << "[mosaic]\n"
     << "jitter_lo = " << mosaic_jitter_lo << "\n"
     << "jitter_hi = " << mosaic_jitter_hi << "\n"
     << "scale_lo = " << mosaic_scale_lo << "\n"
     << "scale_hi = " << mosaic_scale_hi << "\n"
     << "flip_prob = " << mosaic_flip_prob << "\n"
     << "brightness = " << mosaic_brightness << "\n"
     << "saturation = " << mosaic_saturation << "\n"
     << "hue = " << mosaic_hue << "\n"
     << "min_box_pixels = " << mosaic_min_box_pixels << "\n";
  return os.str();
}

inline RunConfig RunConfig::parse_ini_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  return detail::config_from_tree(tree);
}

inline RunConfig RunConfig::parse_ini_file(const std::string& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  return detail::config_from_tree(tree);
}

}  // namespace fsd
