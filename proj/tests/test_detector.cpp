#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fsdnet/detector.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using fsd::BBox;
using fsd::Detection;
using fsd::ParamStore;
using fsd::Shape;
using fsd::Tensor;



TEST_CASE("spp quadruples channels and keeps spatial size") {
  fsd::Rng rng(1);
  for (int c : {1, 3, 46, 512}) {
    Tensor x = testutil::random_tensor({1, c, 4, 4}, rng);
    Tensor y = fsd::spp(x);
    REQUIRE(y.shape() == Shape{1, 4 * c, 4, 4});
  }
}

TEST_CASE("spp of a constant is constant") {
  Tensor x(Shape{1, 2, 5, 5}, 1.25);
  Tensor y = fsd::spp(x);
  for (double v : y.data()) REQUIRE(v == 1.25);
}

TEST_CASE("spp branches match a window-max oracle") {
  fsd::Rng rng(2);
  Tensor x = testutil::random_tensor({1, 4, 13, 13}, rng);
  Tensor y = fsd::spp(x);
  const int kernels[3] = {5, 9, 13};
  for (int br = 0; br < 4; ++br) {
    for (int64_t c = 0; c < 4; ++c)
      for (int64_t oy = 0; oy < 13; ++oy)
        for (int64_t ox = 0; ox < 13; ++ox) {
          double want;
          if (br == 0) {
            want = x.at(0, c, oy, ox);
          } else {
            const int k = kernels[br - 1], r = k / 2;
            want = -1e300;
            for (int64_t iy = oy - r; iy <= oy + r; ++iy)
              for (int64_t ix = ox - r; ix <= ox + r; ++ix) {
                if (iy < 0 || iy >= 13 || ix < 0 || ix >= 13) continue;
                want = std::max(want, x.at(0, c, iy, ix));
              }
          }
          REQUIRE(y.at(0, br * 4 + c, oy, ox) == want);
        }
  }
}

TEST_CASE("heads emit 21 channels at grids 2/4/8 for S=64") {
  ParamStore store;
  fsd::Rng rng(3);
  fsd::DetectionHeads heads(store, "det", 24, 28, 46, fsd::DetectorConfig{},
                            rng);
  fsd::FeatureTaps taps;
  taps.large = testutil::random_tensor({1, 24, 8, 8}, rng);
  taps.mid = testutil::random_tensor({1, 28, 4, 4}, rng);
  taps.small = testutil::random_tensor({1, 46, 2, 2}, rng);
  fsd::RawPredictions raws = heads.forward(taps, true);
  REQUIRE(raws.scales[0].shape() == Shape{1, 21, 2, 2});
  REQUIRE(raws.scales[1].shape() == Shape{1, 21, 4, 4});
  REQUIRE(raws.scales[2].shape() == Shape{1, 21, 8, 8});

  SECTION("spp feeds only the deepest branch") {
    auto audit = heads.audit();
    REQUIRE(audit.spp_on_branch == std::array<bool, 3>{true, false, false});
    REQUIRE(audit.branch_input_channels[0] == 4 * 46);
    REQUIRE(audit.branch_input_channels[1] == 32 + 28);
    REQUIRE(audit.branch_input_channels[2] == 32 + 24);
    REQUIRE(audit.out_channels == 3 * (5 + 2));
  }

  SECTION("large-grid loss reaches the deepest tap") {
    taps.small.set_requires_grad(true);
    fsd::RawPredictions r = heads.forward(taps, true);
    fsd::sum(fsd::sigmoid(r.scales[2])).backward();
    REQUIRE(taps.small.has_grad());
    double peak = 0.0;
    for (double g : taps.small.grad()) peak = std::max(peak, std::abs(g));
    REQUIRE(peak > 1e-12);
  }

  SECTION("tap shape mismatch rejected") {
    fsd::FeatureTaps bad = taps;
    bad.mid = testutil::random_tensor({1, 28, 3, 3}, rng);
    REQUIRE_THROWS_AS(heads.forward(bad, true), std::invalid_argument);
  }
}

TEST_CASE("decode closed-form cases") {
  const int64_t grid = 13;
  BBox b = fsd::decode_box(0.0, 0.0, 0.0, 0.0, grid, 0, 0, 20.0, 30.0, 416);
  REQUIRE(b.cx == Catch::Approx(0.5 / 13).margin(1e-12));
  REQUIRE(b.cy == Catch::Approx(0.5 / 13).margin(1e-12));
  REQUIRE(b.w == Catch::Approx(20.0 / 416).margin(1e-12));
  REQUIRE(b.h == Catch::Approx(30.0 / 416).margin(1e-12));

  SECTION("exp clamp guards overflow") {
    BBox big = fsd::decode_box(0, 0, 500.0, -500.0, grid, 0, 0, 20, 30, 416);
    REQUIRE(std::isfinite(big.w));
    REQUIRE(big.h > 0.0);
  }

  SECTION("very negative objectness is filtered") {
    Tensor raw(Shape{1, fsd::head_out_channels(), 2, 2}, 0.0);
    for (int j = 0; j < 3; ++j)
      for (int64_t cy = 0; cy < 2; ++cy)
        for (int64_t cx = 0; cx < 2; ++cx)
          raw.at(0, j * fsd::fields_per_anchor() + 4, cy, cx) = -40.0;
    auto dets = fsd::decode(raw, {{{10, 10}, {20, 20}, {30, 30}}}, 64, 0.25);
    REQUIRE(dets.empty());
  }
}

TEST_CASE("decode then encode is the identity on assigned boxes") {
  fsd::Rng rng(4);
  const int S = 64;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t grid = std::array<int64_t, 3>{2, 4, 8}[rng.uniform_int(0, 2)];
    const double aw = rng.uniform(4.0, 60.0), ah = rng.uniform(4.0, 60.0);
    const int64_t cx = rng.uniform_int(0, grid - 1);
    const int64_t cy = rng.uniform_int(0, grid - 1);
    BBox gt;
    gt.cx = (cx + rng.uniform(0.05, 0.95)) / grid;
    gt.cy = (cy + rng.uniform(0.05, 0.95)) / grid;
    gt.w = rng.uniform(0.02, 0.9);
    gt.h = rng.uniform(0.02, 0.9);
    fsd::EncodedBox e = fsd::encode_box(gt, grid, cx, cy, aw, ah, S);
    BBox back = fsd::decode_box(e.tx, e.ty, e.tw, e.th, grid, cx, cy, aw, ah, S);
    worst = std::max({worst, std::abs(back.cx - gt.cx),
                      std::abs(back.cy - gt.cy), std::abs(back.w - gt.w),
                      std::abs(back.h - gt.h)});
  }
  REQUIRE(worst < 1e-9);
}

TEST_CASE("nms basics") {
  Detection a;
  a.bbox = {0.5, 0.5, 0.2, 0.2, 0};
  a.score = 0.9;
  REQUIRE(fsd::nms({a}, 0.45).size() == 1);

  Detection b = a;
  b.score = 0.8;
  auto kept = fsd::nms({b, a}, 0.5);
  REQUIRE(kept.size() == 1);
  REQUIRE(kept[0].score == 0.9);

  SECTION("different classes never suppress each other") {
    Detection c = a;
    c.class_id = 1;
    c.score = 0.3;
    REQUIRE(fsd::nms({a, c}, 0.5).size() == 2);
  }
}

TEST_CASE("nms equals brute-force suppression on random sets") {
  fsd::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto dets = oracles::random_dets(rng, 50);
    auto fast = fsd::nms(dets, 0.45);
    auto slow = oracles::brute_nms(dets, 0.45);
    REQUIRE(oracles::same_dets(fast, slow));
  }
}

TEST_CASE("nms output invariants") {
  fsd::Rng rng(6);
  auto kept = fsd::nms(oracles::random_dets(rng, 80), 0.45);
  for (size_t i = 1; i < kept.size(); ++i)
    REQUIRE(kept[i - 1].score >= kept[i].score);
  for (size_t i = 0; i < kept.size(); ++i)
    for (size_t j = i + 1; j < kept.size(); ++j)
      if (kept[i].class_id == kept[j].class_id)
        REQUIRE(fsd::iou(kept[i].bbox, kept[j].bbox) <= 0.45);
}

TEST_CASE("detection dump format") {
  Detection d;
  d.bbox = {0.5, 0.25, 0.125, 0.0625, 1};
  d.class_id = 1;
  d.score = 0.875;
  REQUIRE(fsd::format_detection("img_0007", d) ==
          "img_0007 1 0.875000 0.500000 0.250000 0.125000 0.062500");
}

TEST_CASE("anchor groups sorted by area, largest on the deepest grid") {
  fsd::AnchorSet set = fsd::default_anchors(64);
  set.validate();
  auto deepest = set.for_scale(0);
  auto finest = set.for_scale(2);
  REQUIRE(deepest[0].first * deepest[0].second >=
          finest[2].first * finest[2].second);
  fsd::AnchorSet bad = set;
  std::swap(bad.anchors[0], bad.anchors[8]);
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}
