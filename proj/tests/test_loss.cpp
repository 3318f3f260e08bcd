#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fsdnet/loss.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using fsd::AnchorSet;
using fsd::Assignment;
using fsd::BBox;
using fsd::RawPredictions;
using fsd::Shape;
using fsd::Tensor;



TEST_CASE("iou basics") {
  BBox a{0.5, 0.5, 0.2, 0.2, 0};
  REQUIRE(fsd::iou(a, a) == 1.0);
  BBox b{0.9, 0.9, 0.1, 0.1, 0};
  REQUIRE(fsd::iou(a, b) == 0.0);
  // corner form (0,0,2,2) vs (1,1,3,3): intersection 1, union 7
  BBox c{1.0, 1.0, 2.0, 2.0, 0};
  BBox d{2.0, 2.0, 2.0, 2.0, 0};
  REQUIRE(fsd::iou(c, d) == Catch::Approx(1.0 / 7.0).margin(1e-15));
}

TEST_CASE("ciou_loss trivial cases") {
  BBox g{0.5, 0.5, 0.3, 0.2, 0};
  REQUIRE(fsd::ciou_loss(g, g) == 0.0);

  SECTION("same aspect ratio removes the v term") {
    BBox p{0.4, 0.45, 0.15, 0.1, 0};  // same w/h ratio as g
    const double got = fsd::ciou_loss(p, g);
    const double iou = fsd::iou(p, g);
    const double rho2 = 0.1 * 0.1 + 0.05 * 0.05;
    const double cw = (g.cx + g.w / 2) - (p.cx - p.w / 2);
    const double ch = (g.cy + g.h / 2) - (p.cy - p.h / 2);
    REQUIRE(got == Catch::Approx(1.0 - iou + rho2 / (cw * cw + ch * ch))
                       .margin(1e-12));
  }
  SECTION("hand-computed 61/63 case") {
    BBox p{1.0, 1.0, 2.0, 2.0, 0};
    BBox q{2.0, 2.0, 2.0, 2.0, 0};
    REQUIRE(fsd::ciou_loss(p, q) == Catch::Approx(61.0 / 63.0).margin(1e-12));
  }
  SECTION("degenerate sizes rejected") {
    BBox bad{0.5, 0.5, 0.0, 0.1, 0};
    REQUIRE_THROWS_AS(fsd::ciou_loss(bad, g), std::invalid_argument);
  }
}

TEST_CASE("ciou_loss matches the scalar oracle on random pairs") {
  fsd::Rng rng(42);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const BBox p = oracles::random_box(rng), g = oracles::random_box(rng);
    worst = std::max(worst, std::abs(fsd::ciou_loss(p, g) - oracles::ciou_oracle(p, g)));
  }
  REQUIRE(worst < 1e-9);
}

TEST_CASE("ciou_loss bounds and lower bound by 1-iou") {
  fsd::Rng rng(43);
  for (int i = 0; i < 100000; ++i) {
    const BBox p = oracles::random_box(rng), g = oracles::random_box(rng);
    const double l = fsd::ciou_loss(p, g);
    REQUIRE(l >= 0.0);
    REQUIRE(l < 3.0);
    REQUIRE(l >= 1.0 - fsd::iou(p, g) - 1e-15);
  }
}

TEST_CASE("iou and aspect penalty are scale invariant") {
  fsd::Rng rng(44);
  for (int i = 0; i < 200; ++i) {
    BBox p = oracles::random_box(rng), g = oracles::random_box(rng);
    const double s = rng.uniform(0.1, 10.0);
    BBox ps = p, gs = g;
    ps.cx *= s; ps.cy *= s; ps.w *= s; ps.h *= s;
    gs.cx *= s; gs.cy *= s; gs.w *= s; gs.h *= s;
    REQUIRE(fsd::iou(ps, gs) == Catch::Approx(fsd::iou(p, g)).margin(1e-12));
    const double v1 = std::atan(g.w / g.h) - std::atan(p.w / p.h);
    const double v2 = std::atan(gs.w / gs.h) - std::atan(ps.w / ps.h);
    REQUIRE(v2 == Catch::Approx(v1).margin(1e-12));
    REQUIRE(fsd::ciou_loss(ps, gs) ==
            Catch::Approx(fsd::ciou_loss(p, g)).margin(1e-12));
  }
}

TEST_CASE("ciou gradient matches finite differences") {
  fsd::Rng rng(45);
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    BBox p = oracles::random_box(rng);
    const BBox g = oracles::random_box(rng);
    fsd::CiouGrad grad;
    fsd::ciou_loss(p, g, &grad);
    double* fields[4] = {&p.cx, &p.cy, &p.w, &p.h};
    const double analytic[4] = {grad.d_cx, grad.d_cy, grad.d_w, grad.d_h};
    for (int fidx = 0; fidx < 4; ++fidx) {
      const double saved = *fields[fidx];
      const double step = 1e-6;
      *fields[fidx] = saved + step;
      const double fp = fsd::ciou_loss(p, g);
      *fields[fidx] = saved - step;
      const double fm = fsd::ciou_loss(p, g);
      *fields[fidx] = saved;
      const double fd = (fp - fm) / (2 * step);
      worst = std::max(worst, testutil::rel_err(analytic[fidx], fd));
    }
  }
  REQUIRE(worst < 1e-4);
}

TEST_CASE("assign_targets places one slot per ground truth") {
  const int S = 128;
  AnchorSet anchors = fsd::default_anchors(S);
  const std::array<int64_t, 3> grids = {4, 8, 16};

  SECTION("gt matching anchor 5 lands at its scale and cell") {
    BBox gt;
    gt.w = anchors.anchors[5].first / S;
    gt.h = anchors.anchors[5].second / S;
    gt.cx = (3 + 0.5) / 8.0;  // cell (3,4) on the stride-16 grid
    gt.cy = (4 + 0.5) / 8.0;
    Assignment a = fsd::assign_targets({gt}, anchors, grids, S);
    REQUIRE(a.assigned_count() == 1);
    const int64_t idx = Assignment::slot(5 % 3, 4, 3, 8);
    REQUIRE(a.scales[1].obj[idx] == 1);
    REQUIRE(a.scales[1].noobj[idx] == 0);
    REQUIRE(a.scales[1].gt_index[idx] == 0);
  }

  SECTION("no ground truth leaves the noobj mask full") {
    Assignment a = fsd::assign_targets({}, anchors, grids, S);
    REQUIRE(a.assigned_count() == 0);
    for (const auto& sc : a.scales)
      for (uint8_t v : sc.noobj) REQUIRE(v == 1);
  }

  SECTION("two gts in different cells get disjoint slots") {
    fsd::Rng rng(46);
    for (int trial = 0; trial < 50; ++trial) {
      BBox g1 = oracles::random_box(rng), g2 = oracles::random_box(rng);
      g2.cx = std::fmod(g1.cx + 0.5, 0.96);
      g2.cy = std::fmod(g1.cy + 0.37, 0.96);
      Assignment a = fsd::assign_targets({g1, g2}, anchors, grids, S);
      REQUIRE(a.assigned_count() == 2);

      // brute-force best-IoU search for the first gt
      int best_a = -1;
      double best = -1.0;
      for (int k = 0; k < 9; ++k) {
        const double i = fsd::shape_iou(g1.w * S, g1.h * S,
                                        anchors.anchors[k].first,
                                        anchors.anchors[k].second);
        if (i > best) {
          best = i;
          best_a = k;
        }
      }
      const int scale = 2 - best_a / 3;
      const int64_t K = grids[scale];
      const int64_t idx =
          Assignment::slot(best_a % 3, static_cast<int64_t>(g1.cy * K),
                           static_cast<int64_t>(g1.cx * K), K);
      REQUIRE(a.scales[scale].gt_index[idx] == 0);
    }
  }

  SECTION("center outside the unit square rejected") {
    BBox bad{1.5, 0.5, 0.1, 0.1, 0};
    REQUIRE_THROWS_AS(fsd::assign_targets({bad}, anchors, grids, S),
                      std::invalid_argument);
  }
}

TEST_CASE("total_loss of perfect predictions is tiny") {
  const int S = 32;
  BBox gt;
  gt.cx = 0.55;
  gt.cy = 0.6;
  gt.w = 0.5;
  gt.h = 0.45;
  gt.class_id = 0;
  oracles::MicroFixture f = oracles::micro_fixture(7, {gt});
  const double off = fsd::logit(1e-7), on = fsd::logit(1.0 - 1e-7);

  for (int s = 0; s < 3; ++s) {
    Tensor& raw = f.raws.scales[s];
    const int64_t K = raw.shape().h;
    for (int j = 0; j < 3; ++j)
      for (int64_t cy = 0; cy < K; ++cy)
        for (int64_t cx = 0; cx < K; ++cx)
          raw.at(0, j * 7 + 4, cy, cx) = off;
  }
  // fill the assigned slot with the exact encoding
  for (int s = 0; s < 3; ++s) {
    const auto& sc = f.assignments[0].scales[s];
    const auto sa = f.anchors.for_scale(s);
    for (int j = 0; j < 3; ++j)
      for (int64_t cy = 0; cy < sc.grid; ++cy)
        for (int64_t cx = 0; cx < sc.grid; ++cx) {
          const int64_t slot = Assignment::slot(j, cy, cx, sc.grid);
          if (!sc.obj[slot]) continue;
          fsd::EncodedBox e = fsd::encode_box(gt, sc.grid, cx, cy, sa[j].first,
                                              sa[j].second, S);
          Tensor& raw = f.raws.scales[s];
          raw.at(0, j * 7 + 0, cy, cx) = e.tx;
          raw.at(0, j * 7 + 1, cy, cx) = e.ty;
          raw.at(0, j * 7 + 2, cy, cx) = e.tw;
          raw.at(0, j * 7 + 3, cy, cx) = e.th;
          raw.at(0, j * 7 + 4, cy, cx) = on;
          raw.at(0, j * 7 + 5, cy, cx) = on;   // fire
          raw.at(0, j * 7 + 6, cy, cx) = off;  // smoke
        }
  }
  auto [total, parts] =
      fsd::total_loss(f.raws, f.assignments, f.anchors, S, {}, fsd::BoxMode::kCiou);
  REQUIRE(parts.total < 1e-5);
  REQUIRE(parts.total == total.data()[0]);
}

TEST_CASE("total_loss with empty assignment") {
  oracles::MicroFixture f = oracles::micro_fixture(8, {});
  const double off = fsd::logit(1e-7);
  for (int s = 0; s < 3; ++s) {
    Tensor& raw = f.raws.scales[s];
    const int64_t K = raw.shape().h;
    for (int j = 0; j < 3; ++j)
      for (int64_t cy = 0; cy < K; ++cy)
        for (int64_t cx = 0; cx < K; ++cx)
          raw.at(0, j * 7 + 4, cy, cx) = off;
  }
  auto [total, parts] =
      fsd::total_loss(f.raws, f.assignments, f.anchors, f.input_size, {},
                      fsd::BoxMode::kCiou);
  REQUIRE(parts.box == 0.0);
  REQUIRE(parts.cls == 0.0);
  REQUIRE(parts.obj < 1e-4);
}

TEST_CASE("total_loss components match the scalar oracle") {
  BBox g1{0.55, 0.6, 0.5, 0.45, 0};
  BBox g2{0.2, 0.25, 0.15, 0.3, 1};
  for (auto mode : {fsd::BoxMode::kCiou, fsd::BoxMode::kMse}) {
    oracles::MicroFixture f = oracles::micro_fixture(9, {g1, g2});
    auto [total, parts] = fsd::total_loss(f.raws, f.assignments, f.anchors,
                                          f.input_size, {}, mode);
    fsd::LossBreakdown want = oracles::scalar_loss_oracle(f.raws, f.assignments,
                                                 f.anchors, f.input_size, {},
                                                 mode);
    REQUIRE(std::abs(parts.box - want.box) < 1e-9);
    REQUIRE(std::abs(parts.obj - want.obj) < 1e-9);
    REQUIRE(std::abs(parts.cls - want.cls) < 1e-9);
    REQUIRE(parts.total >= 0.0);
  }
}

TEST_CASE("total_loss gradients match finite differences") {
  BBox g1{0.55, 0.6, 0.5, 0.45, 0};
  BBox g2{0.2, 0.25, 0.15, 0.3, 1};
  for (auto mode : {fsd::BoxMode::kCiou, fsd::BoxMode::kMse}) {
    oracles::MicroFixture f = oracles::micro_fixture(10, {g1, g2});
    for (int s = 0; s < 3; ++s) f.raws.scales[s].set_requires_grad(true);
    auto loss = [&] {
      return fsd::total_loss(f.raws, f.assignments, f.anchors, f.input_size,
                             {}, mode)
          .first;
    };
    for (int s = 0; s < 3; ++s)
      REQUIRE(testutil::max_grad_rel_err(f.raws.scales[s], loss) < 1e-4);
  }
}

TEST_CASE("non-finite loss aborts with component attribution") {
  BBox g{0.55, 0.6, 0.5, 0.45, 0};
  oracles::MicroFixture f = oracles::micro_fixture(11, {g});
  // poison a box field on the assigned slot
  bool poisoned = false;
  for (int s = 0; s < 3 && !poisoned; ++s) {
    const auto& sc = f.assignments[0].scales[s];
    for (size_t i = 0; i < sc.obj.size() && !poisoned; ++i) {
      if (!sc.obj[i]) continue;
      const int64_t K = sc.grid;
      const int j = static_cast<int>(i / (K * K));
      const int64_t cy = (i / K) % K, cx = i % K;
      f.raws.scales[s].at(0, j * 7 + 2, cy, cx) =
          std::numeric_limits<double>::quiet_NaN();
      poisoned = true;
    }
  }
  REQUIRE(poisoned);
  REQUIRE_THROWS_WITH(
      fsd::total_loss(f.raws, f.assignments, f.anchors, f.input_size, {},
                      fsd::BoxMode::kCiou),
      Catch::Matchers::ContainsSubstring("box"));
}
