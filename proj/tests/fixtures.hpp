#pragma once

// Synthetic training fixtures shared by the CLI and acceptance suites:
// 64x64 scenes with one bright rectangle on a dark background, boxes sized
// near an anchor shape and centered on stride-32 cells so a short run can
// overfit them.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fsdnet/augment.hpp"
#include "fsdnet/config.hpp"
#include "fsdnet/image_io.hpp"
#include "fsdnet/voc.hpp"

namespace fixtures {

inline fsd::Sample fire_sample(int idx, int size = 64) {
  fsd::Sample s;
  s.image = fsd::Tensor(fsd::Shape{1, 3, size, size});
  fsd::Rng noise(100 + idx);
  const double cx = (idx % 2 == 0) ? 0.25 : 0.75;
  const double cy = (idx / 2 == 0) ? 0.25 : 0.75;
  const int w = 26, h = 30;
  const int x1 = static_cast<int>(cx * size) - w / 2;
  const int y1 = static_cast<int>(cy * size) - h / 2;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const bool hot = x >= x1 && x < x1 + w && y >= y1 && y < y1 + h;
      s.image.at(0, 0, y, x) =
          std::clamp((hot ? 0.95 : 0.08) + noise.uniform(-0.02, 0.02), 0.0, 1.0);
      s.image.at(0, 1, y, x) =
          std::clamp((hot ? 0.45 : 0.10) + noise.uniform(-0.02, 0.02), 0.0, 1.0);
      s.image.at(0, 2, y, x) =
          std::clamp((hot ? 0.10 : 0.12) + noise.uniform(-0.02, 0.02), 0.0, 1.0);
    }
  fsd::BBox b;
  b.cx = (x1 + w / 2.0) / size;
  b.cy = (y1 + h / 2.0) / size;
  b.w = static_cast<double>(w) / size;
  b.h = static_cast<double>(h) / size;
  b.class_id = 0;
  s.boxes.push_back(b);
  return s;
}

inline void write_sample(const fsd::Sample& s, const std::filesystem::path& dir,
                         const std::string& stem) {
  fsd::write_ppm(s.image, (dir / (stem + ".ppm")).string());
  const int size = static_cast<int>(s.image.shape().w);
  fsd::VocAnnotation ann;
  ann.filename = stem + ".ppm";
  ann.width = size;
  ann.height = size;
  for (const fsd::BBox& b : s.boxes) {
    fsd::VocObject o;
    o.name = fsd::kClassNames[b.class_id];
    o.xmin = static_cast<int>(std::lround((b.cx - b.w / 2) * size));
    o.ymin = static_cast<int>(std::lround((b.cy - b.h / 2) * size));
    o.xmax = static_cast<int>(std::lround((b.cx + b.w / 2) * size));
    o.ymax = static_cast<int>(std::lround((b.cy + b.h / 2) * size));
    ann.objects.push_back(o);
  }
  fsd::write_voc_xml(ann, (dir / (stem + ".xml")).string());
}

// Four images plus a manifest; returns the manifest path.
inline std::string write_training_fixture(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  for (int i = 0; i < 4; ++i) {
    const std::string stem = "fixture_" + std::to_string(i);
    write_sample(fire_sample(i), dir, stem);
    manifest << stem << ".ppm\n";
  }
  return (dir / "manifest.txt").string();
}

// Training configuration verified to overfit the four fixture images within
// 300 steps.
inline fsd::RunConfig overfit_config() {
  fsd::RunConfig cfg;
  cfg.apply_preset();
  cfg.lr = 0.07;
  cfg.lr_schedule = "cosine";
  cfg.grad_clip = 0.3;
  cfg.lambda_coord = 1.0;
  cfg.steps = 300;
  cfg.batch_size = 4;
  cfg.mosaic_prob = 0.0;
  cfg.seed = 1;
  cfg.validate();
  return cfg;
}

}  // namespace fixtures
