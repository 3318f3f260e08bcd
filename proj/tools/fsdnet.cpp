// fsdnet command-line toolkit: training, detection, classification,
// evaluation, and dataset construction for the fire/smoke detector.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "fsdnet/anchors.hpp"
#include "fsdnet/augment.hpp"
#include "fsdnet/dataset.hpp"
#include "fsdnet/eval.hpp"
#include "fsdnet/gradcheck.hpp"
#include "fsdnet/image_io.hpp"
#include "fsdnet/model.hpp"
#include "fsdnet/train.hpp"

namespace fs = std::filesystem;

namespace {

struct ConfigCli {
  std::string config_path;
  std::optional<double> lr, momentum, mosaic_prob, lambda_coord, lambda_noobj,
      conf_thresh, nms_iou, grad_clip;
  std::optional<int> steps, batch_size, input_size;
  std::optional<uint64_t> seed;
  std::optional<std::string> preset, box_mode, lr_schedule, anchors_file;
  bool print_config = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file (INI)");
    cmd->add_option("--preset", preset, "model preset: desk or paper");
    cmd->add_option("--input-size", input_size, "network input size");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--lr-schedule", lr_schedule, "constant or cosine");
    cmd->add_option("--grad-clip", grad_clip, "element-wise gradient bound");
    cmd->add_option("--momentum", momentum, "SGD momentum");
    cmd->add_option("--steps", steps, "training steps");
    cmd->add_option("--batch-size", batch_size, "images per step");
    cmd->add_option("--mosaic-prob", mosaic_prob, "mosaic probability");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--box-mode", box_mode, "box loss: ciou or mse");
    cmd->add_option("--lambda-coord", lambda_coord, "box term weight");
    cmd->add_option("--lambda-noobj", lambda_noobj, "no-object term weight");
    cmd->add_option("--confidence", conf_thresh, "detection score threshold");
    cmd->add_option("--nms-iou", nms_iou, "NMS IoU threshold");
    cmd->add_option("--anchors-file", anchors_file, "anchor file (w h lines)");
    cmd->add_flag("--print-config", print_config,
                  "print the effective configuration and exit");
  }

  fsd::RunConfig resolve() const {
    fsd::RunConfig cfg;
    if (!config_path.empty()) {
      cfg = fsd::RunConfig::parse_ini_file(config_path);
    } else {
      cfg.apply_preset();
    }
    if (preset) {
      cfg.preset = *preset;
      cfg.apply_preset();
    }
    if (input_size) cfg.input_size = *input_size;
    if (lr) cfg.lr = *lr;
    if (lr_schedule) cfg.lr_schedule = *lr_schedule;
    if (grad_clip) cfg.grad_clip = *grad_clip;
    if (momentum) cfg.momentum = *momentum;
    if (steps) cfg.steps = *steps;
    if (batch_size) cfg.batch_size = *batch_size;
    if (mosaic_prob) cfg.mosaic_prob = *mosaic_prob;
    if (seed) cfg.seed = *seed;
    if (box_mode) cfg.box_mode = *box_mode;
    if (lambda_coord) cfg.lambda_coord = *lambda_coord;
    if (lambda_noobj) cfg.lambda_noobj = *lambda_noobj;
    if (conf_thresh) cfg.confidence_threshold = *conf_thresh;
    if (nms_iou) cfg.nms_iou_threshold = *nms_iou;
    if (anchors_file) {
      cfg.anchors_source = "file";
      cfg.anchors_file = *anchors_file;
    }
    cfg.validate();
    return cfg;
  }
};

std::string stem_of(const std::string& path) {
  return fs::path(path).stem().string();
}

fsd::Tensor load_image_sized(const std::string& path, int input_size) {
  fsd::Tensor img = fsd::read_ppm(path);
  if (img.shape().h != input_size || img.shape().w != input_size)
    img = fsd::resize_nearest(img, input_size, input_size);
  return img;
}

std::vector<std::string> read_manifest_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

int cmd_train(const ConfigCli& cc, const std::string& manifest,
              const std::string& out_path) {
  fsd::RunConfig cfg = cc.resolve();
  if (cc.print_config) {
    std::cout << cfg.to_ini();
    return 0;
  }
  fsd::FsdNetModel model = fsd::FsdNetModel::build(cfg);
  std::vector<fsd::TrainSample> data =
      fsd::load_training_set(manifest, cfg.input_size);
  std::cerr << "train: " << data.size() << " samples, " << cfg.steps
            << " steps, " << model.store.count_trainable() << " parameters\n";
  std::vector<fsd::StepLog> logs = fsd::train_model(model, data, &std::cout);
  model.save(out_path);
  if (!logs.empty())
    std::cerr << "train: final " << fsd::format_step_log(logs.back())
              << "; checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_detect(const ConfigCli& cc, const std::string& ckpt,
               const std::string& image_path, std::string image_id,
               const std::string& out_path, const std::string& dump_path) {
  fsd::RunConfig cfg = cc.resolve();
  fsd::FsdNetModel model = fsd::FsdNetModel::build(cfg);
  model.load(ckpt);
  fsd::Tensor img = load_image_sized(image_path, cfg.input_size);
  if (image_id.empty()) image_id = stem_of(image_path);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<fsd::Detection> dets = model.detect(img);
  const auto t1 = std::chrono::steady_clock::now();
  std::cerr << "detect: " << dets.size() << " detections in "
            << std::chrono::duration<double, std::milli>(t1 - t0).count()
            << " ms\n";

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot write " + out_path);
    out = &file;
  }
  for (const fsd::Detection& d : dets)
    *out << fsd::format_detection(image_id, d) << "\n";

  if (!dump_path.empty()) {
    fsd::Tensor annotated = fsd::read_ppm(image_path);
    for (const fsd::Detection& d : dets) {
      if (d.class_id == 0)
        fsd::draw_box_outline(annotated, d.bbox, 1.0, 0.85, 0.0);  // fire
      else
        fsd::draw_box_outline(annotated, d.bbox, 0.6, 0.0, 0.8);  // smoke
    }
    fsd::write_ppm(annotated, dump_path);
  }
  return 0;
}

int cmd_classify(const ConfigCli& cc, const std::string& ckpt,
                 const std::string& image_path, double threshold) {
  fsd::RunConfig cfg = cc.resolve();
  fsd::FsdNetModel model = fsd::FsdNetModel::build(cfg);
  model.load(ckpt);
  fsd::Tensor img = load_image_sized(image_path, cfg.input_size);
  const auto t0 = std::chrono::steady_clock::now();
  const double p = model.classify(img);
  const auto t1 = std::chrono::steady_clock::now();
  std::cerr << "classify: "
            << std::chrono::duration<double, std::milli>(t1 - t0).count()
            << " ms\n";
  char line[64];
  std::snprintf(line, sizeof(line), "%s %.6f",
                fsd::is_fire(p, threshold) ? "fire" : "normal", p);
  std::cout << line << "\n";
  return 0;
}

int cmd_eval_map(const std::string& dets_path, const std::string& gt_manifest,
                 double iou_thresh, const std::string& ap_mode) {
  // ground truth from VOC files referenced by the manifest
  const fs::path base = fs::path(gt_manifest).parent_path();
  std::map<std::string, int> image_ids;
  std::vector<fsd::EvalGroundTruth> gts;
  for (const std::string& line : read_manifest_lines(gt_manifest)) {
    fs::path xml = base / line;
    xml.replace_extension(".xml");
    const std::string id = stem_of(line);
    const int image_index = static_cast<int>(image_ids.size());
    image_ids.emplace(id, image_index);
    if (!fs::exists(xml)) continue;
    const fsd::VocAnnotation ann = fsd::read_voc_xml(xml.string());
    for (const fsd::BBox& b : fsd::annotation_boxes(ann))
      gts.push_back({image_ids.at(id), b.class_id, b});
  }

  std::ifstream in(dets_path);
  if (!in) throw std::runtime_error("cannot open detections " + dets_path);
  std::vector<fsd::EvalDetection> dets;
  std::string id;
  fsd::EvalDetection d;
  while (in >> id >> d.class_id >> d.score >> d.box.cx >> d.box.cy >>
         d.box.w >> d.box.h) {
    auto it = image_ids.find(id);
    if (it == image_ids.end())
      throw std::runtime_error("eval-map: detection for unknown image '" + id +
                               "'");
    d.image = it->second;
    d.box.class_id = d.class_id;
    dets.push_back(d);
  }

  const fsd::ApMode mode = ap_mode == "11" ? fsd::ApMode::kElevenPoint
                                           : fsd::ApMode::kAllPoints;
  const fsd::MapResult result = fsd::evaluate_map(dets, gts, iou_thresh, mode);
  std::printf("%-10s %-10s %-10s %-10s\n", "Method", "Fire", "Smoke", "mAP");
  std::printf("%-10s ", "fsdnet");
  for (const fsd::ClassAp& c : result.per_class) {
    if (c.num_gts > 0)
      std::printf("%-10.4f ", c.ap);
    else
      std::printf("%-10s ", "n/a");
  }
  std::printf("%-10.4f\n", result.map);
  return 0;
}

int cmd_eval_cls(const std::string& preds_path, const std::string& truth_path,
                 double threshold) {
  auto read_pairs = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::map<std::string, double> out;
    std::string id;
    double value;
    while (in >> id >> value) out[id] = value;
    return out;
  };
  const auto preds = read_pairs(preds_path);
  const auto truth = read_pairs(truth_path);
  std::vector<int> pred_labels, true_labels;
  for (const auto& [id, label] : truth) {
    auto it = preds.find(id);
    if (it == preds.end())
      throw std::runtime_error("eval-cls: missing prediction for '" + id + "'");
    pred_labels.push_back(it->second >= threshold ? 1 : 0);
    true_labels.push_back(label >= 0.5 ? 1 : 0);
  }
  const fsd::ClassificationMetrics m =
      fsd::classification_metrics(pred_labels, true_labels);
  auto rate = [](const std::optional<double>& r) {
    if (!r) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *r * 100.0);
    return std::string(buf);
  };
  std::printf("%-10s %-10s %-10s %-10s\n", "Method", "FP Rate", "FN Rate",
              "Accuracy");
  std::printf("%-10s %-10s %-10s %-10.2f\n", "fsdnet", rate(m.fp_rate).c_str(),
              rate(m.fn_rate).c_str(), m.accuracy * 100.0);
  return 0;
}

int cmd_dataset_filter(const std::string& in_dir, const std::string& out_dir,
                       const std::string& report_path,
                       const fsd::FilterOptions& opt) {
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.path().extension() == ".ppm") images.push_back(entry.path());
  std::sort(images.begin(), images.end());

  std::vector<fsd::DatasetEntry> entries;
  for (const fs::path& img : images) {
    fsd::DatasetEntry e;
    e.name = img.filename().string();
    e.image = fsd::read_ppm(img.string());
    fs::path xml = img;
    xml.replace_extension(".xml");
    if (fs::exists(xml)) {
      e.annotation = fsd::read_voc_xml(xml.string());
    } else {
      e.annotation.filename = e.name;
      e.annotation.width = static_cast<int>(e.image.shape().w);
      e.annotation.height = static_cast<int>(e.image.shape().h);
    }
    entries.push_back(std::move(e));
  }

  std::vector<const fsd::DatasetEntry*> kept;
  const fsd::FilterReport report = fsd::filter_dataset(entries, opt, &kept);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    for (const fsd::DatasetEntry* e : kept) {
      fs::copy_file(fs::path(in_dir) / e->name, fs::path(out_dir) / e->name,
                    fs::copy_options::overwrite_existing);
      fs::path xml = fs::path(in_dir) / e->name;
      xml.replace_extension(".xml");
      if (fs::exists(xml))
        fs::copy_file(xml, fs::path(out_dir) / xml.filename().string(),
                      fs::copy_options::overwrite_existing);
    }
  }

  std::ostringstream report_text;
  report_text << "input " << report.input << "\n"
              << "rejected_by_proportion " << report.rejected_by_proportion
              << "\n"
              << "rejected_by_snr " << report.rejected_by_snr << "\n"
              << "rejected_by_color " << report.rejected_by_color << "\n"
              << "kept " << report.kept << "\n";
  for (const auto& [name, verdict] : report.reasons)
    report_text << name << ": " << verdict << "\n";
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw std::runtime_error("cannot write " + report_path);
    out << report_text.str();
  }
  std::cout << report_text.str();
  return 0;
}

int cmd_mosaic_preview(const std::string& in_dir, const std::string& out_prefix,
                       uint64_t seed, int out_size) {
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(in_dir))
    if (entry.path().extension() == ".ppm") images.push_back(entry.path());
  std::sort(images.begin(), images.end());
  if (images.size() < 4)
    throw std::runtime_error("mosaic-preview: need at least 4 .ppm images in " +
                             in_dir);

  std::vector<fsd::Sample> samples;
  for (int i = 0; i < 4; ++i) {
    fsd::Sample s;
    s.image = fsd::read_ppm(images[i].string());
    fs::path xml = images[i];
    xml.replace_extension(".xml");
    if (fs::exists(xml))
      s.boxes = fsd::annotation_boxes(fsd::read_voc_xml(xml.string()));
    samples.push_back(std::move(s));
  }
  fsd::MosaicConfig cfg;
  cfg.out_size = out_size;
  fsd::Rng rng(seed);
  fsd::Sample out = fsd::mosaic(samples, cfg, rng);

  const std::string ppm_path = out_prefix + ".ppm";
  fsd::write_ppm(out.image, ppm_path);
  fsd::VocAnnotation ann;
  ann.filename = fs::path(ppm_path).filename().string();
  ann.width = out_size;
  ann.height = out_size;
  for (const fsd::BBox& b : out.boxes) {
    fsd::VocObject o;
    o.name = fsd::kClassNames[b.class_id];
    o.xmin = static_cast<int>((b.cx - b.w / 2) * out_size);
    o.ymin = static_cast<int>((b.cy - b.h / 2) * out_size);
    o.xmax = std::min(out_size,
                      static_cast<int>(std::ceil((b.cx + b.w / 2) * out_size)));
    o.ymax = std::min(out_size,
                      static_cast<int>(std::ceil((b.cy + b.h / 2) * out_size)));
    ann.objects.push_back(o);
  }
  fsd::write_voc_xml(ann, out_prefix + ".xml");
  std::cout << ppm_path << " " << out.boxes.size() << " boxes\n";
  return 0;
}

int cmd_anchors(const ConfigCli& cc, const std::string& manifest, int k,
                uint64_t seed, const std::string& out_path) {
  fsd::RunConfig cfg = cc.resolve();
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<std::pair<double, double>> shapes;
  for (const std::string& line : read_manifest_lines(manifest)) {
    fs::path xml = base / line;
    xml.replace_extension(".xml");
    if (!fs::exists(xml)) continue;
    const fsd::VocAnnotation ann = fsd::read_voc_xml(xml.string());
    for (const fsd::BBox& b : fsd::annotation_boxes(ann))
      shapes.emplace_back(b.w * cfg.input_size, b.h * cfg.input_size);
  }
  if (shapes.empty())
    throw std::runtime_error("anchors: no annotated boxes in " + manifest);
  const auto centroids = fsd::kmeans_shapes(shapes, k, seed);
  std::cerr << "anchors: " << shapes.size() << " boxes, mean best IoU "
            << fsd::mean_best_iou(shapes, centroids) << "\n";
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw std::runtime_error("cannot write " + out_path);
    out = &file;
  }
  char line[64];
  for (const auto& [w, h] : centroids) {
    std::snprintf(line, sizeof(line), "%.4f %.4f", w, h);
    *out << line << "\n";
  }
  return 0;
}

int cmd_gradcheck(uint64_t seed, double tol) {
  const fsd::GradcheckReport report = fsd::run_gradcheck(seed, tol);
  for (const auto& [name, err] : report.per_tensor)
    std::cerr << "  " << name << ": " << err << "\n";
  std::printf("max_rel_err %.3e over %lld checks (%lld kink-skipped): %s\n",
              report.max_rel_err, static_cast<long long>(report.checked),
              static_cast<long long>(report.skipped_nonsmooth),
              report.pass ? "PASS" : "FAIL");
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fire/smoke detection toolkit"};
  app.require_subcommand(1);

  ConfigCli train_cc, detect_cc, classify_cc, anchors_cc;
  std::string manifest, out_path, ckpt, image_path, image_id, dump_path;
  std::string dets_path, gt_manifest, preds_path, truth_path, ap_mode = "all";
  std::string in_dir, out_dir, report_path, out_prefix;
  double iou_thresh = 0.5, cls_threshold = 0.5;
  uint64_t seed = 1;
  double tol = 1e-4;
  int k = 9, preview_size = 64;
  fsd::FilterOptions filter_opt;
  bool no_proportion = false, no_snr = false, no_color = false;

  CLI::App* train = app.add_subcommand("train", "train on a manifest");
  train_cc.attach(train);
  train->add_option("--manifest", manifest, "training manifest")->required();
  train->add_option("--out", out_path, "checkpoint output path")
      ->default_val("fsdnet.ckpt");

  CLI::App* detect = app.add_subcommand("detect", "detect fire/smoke boxes");
  detect_cc.attach(detect);
  detect->add_option("--checkpoint", ckpt, "checkpoint path")->required();
  detect->add_option("--image", image_path, "input image (PPM)")->required();
  detect->add_option("--image-id", image_id, "id for the dump lines");
  detect->add_option("--out", out_path, "write detections here, not stdout");
  detect->add_option("--dump", dump_path, "annotated PPM output");

  CLI::App* classify = app.add_subcommand("classify", "fire/normal decision");
  classify_cc.attach(classify);
  classify->add_option("--checkpoint", ckpt, "checkpoint path")->required();
  classify->add_option("--image", image_path, "input image (PPM)")->required();
  classify->add_option("--threshold", cls_threshold, "fire decision threshold");

  CLI::App* eval_map = app.add_subcommand("eval-map", "Pascal VOC mAP");
  eval_map->add_option("--dets", dets_path, "detection dump")->required();
  eval_map->add_option("--gt", gt_manifest, "manifest with VOC xmls")
      ->required();
  eval_map->add_option("--iou", iou_thresh, "match IoU threshold");
  eval_map->add_option("--ap-mode", ap_mode, "all or 11");

  CLI::App* eval_cls = app.add_subcommand("eval-cls", "classification metrics");
  eval_cls->add_option("--preds", preds_path, "id probability lines")
      ->required();
  eval_cls->add_option("--truth", truth_path, "id label lines")->required();
  eval_cls->add_option("--threshold", cls_threshold, "fire decision threshold");

  CLI::App* dataset = app.add_subcommand("dataset", "dataset construction");
  dataset->require_subcommand(1);
  CLI::App* filter = dataset->add_subcommand("filter", "screen image/xml pairs");
  filter->add_option("--in", in_dir, "input directory")->required();
  filter->add_option("--out", out_dir, "kept-files directory");
  filter->add_option("--report", report_path, "report file");
  filter->add_flag("--no-proportion", no_proportion, "disable proportion rule");
  filter->add_flag("--no-snr", no_snr, "disable snr rule");
  filter->add_flag("--no-color", no_color, "disable color rule");
  filter->add_option("--min-proportion", filter_opt.min_proportion,
                     "object area ratio floor");
  filter->add_option("--snr-db", filter_opt.snr_thresh_db, "snr floor in dB");
  filter->add_option("--color-fraction", filter_opt.color_fraction_thresh,
                     "fire-colored pixel fraction ceiling");
  CLI::App* preview =
      dataset->add_subcommand("mosaic-preview", "composite four images");
  preview->add_option("--in", in_dir, "directory with >= 4 ppm images")
      ->required();
  preview->add_option("--out", out_prefix, "output prefix")->required();
  preview->add_option("--seed", seed, "mosaic seed");
  preview->add_option("--size", preview_size, "canvas size");

  CLI::App* anchors = app.add_subcommand("anchors", "k-means anchor shapes");
  anchors_cc.attach(anchors);
  anchors->add_option("--manifest", manifest, "manifest with VOC xmls")
      ->required();
  anchors->add_option("-k,--clusters", k, "number of anchors");
  anchors->add_option("--kmeans-seed", seed, "k-means seed");
  anchors->add_option("--out", out_path, "anchor file output");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--seed", seed, "micro-network seed");
  gradcheck->add_option("--tol", tol, "relative error tolerance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_cc, manifest, out_path);
    if (*detect)
      return cmd_detect(detect_cc, ckpt, image_path, image_id, out_path,
                        dump_path);
    if (*classify)
      return cmd_classify(classify_cc, ckpt, image_path, cls_threshold);
    if (*eval_map)
      return cmd_eval_map(dets_path, gt_manifest, iou_thresh, ap_mode);
    if (*eval_cls) return cmd_eval_cls(preds_path, truth_path, cls_threshold);
    if (*dataset) {
      filter_opt.proportion_enabled = !no_proportion;
      filter_opt.snr_enabled = !no_snr;
      filter_opt.color_enabled = !no_color;
      if (*filter)
        return cmd_dataset_filter(in_dir, out_dir, report_path, filter_opt);
      if (*preview)
        return cmd_mosaic_preview(in_dir, out_prefix, seed, preview_size);
    }
    if (*anchors) return cmd_anchors(anchors_cc, manifest, k, seed, out_path);
    if (*gradcheck) return cmd_gradcheck(seed, tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
