#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fsdnet/eval.hpp"
#include "fsdnet/rng.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using fsd::BBox;
using fsd::EvalDetection;
using fsd::EvalGroundTruth;

namespace {

EvalDetection det(int image, int cls, double score, BBox box) {
  return {image, cls, score, box};
}

EvalGroundTruth gt(int image, int cls, BBox box) { return {image, cls, box}; }

}  // namespace

TEST_CASE("classification metrics confusion arithmetic") {
  auto m = fsd::classification_metrics({1, 1, 0, 0}, {1, 0, 0, 1});
  REQUIRE(m.fp_rate.value() == 0.5);
  REQUIRE(m.fn_rate.value() == 0.5);
  REQUIRE(m.accuracy == 0.5);

  SECTION("all correct") {
    auto good = fsd::classification_metrics({1, 0, 1}, {1, 0, 1});
    REQUIRE(good.fp_rate.value() == 0.0);
    REQUIRE(good.fn_rate.value() == 0.0);
    REQUIRE(good.accuracy == 1.0);
  }
  SECTION("no negatives leaves fp_rate not applicable") {
    auto m2 = fsd::classification_metrics({1, 1}, {1, 1});
    REQUIRE_FALSE(m2.fp_rate.has_value());
    REQUIRE(m2.fn_rate.value() == 0.0);
    REQUIRE(m2.accuracy == 1.0);
  }
  SECTION("errors") {
    REQUIRE_THROWS_AS(fsd::classification_metrics({}, {}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(fsd::classification_metrics({1}, {1, 0}),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(fsd::classification_metrics({2}, {1}),
                      std::invalid_argument);
  }
  SECTION("accuracy identity") {
    fsd::Rng rng(1);
    std::vector<int> p, t;
    for (int i = 0; i < 200; ++i) {
      p.push_back(rng.bernoulli(0.4) ? 1 : 0);
      t.push_back(rng.bernoulli(0.6) ? 1 : 0);
    }
    auto m3 = fsd::classification_metrics(p, t);
    const double lhs = m3.accuracy;
    const double rhs =
        1.0 - double(m3.counts.fp + m3.counts.fn) / m3.counts.total();
    REQUIRE(lhs == Catch::Approx(rhs).margin(1e-12));
  }
}

TEST_CASE("matching basics") {
  BBox b{0.5, 0.5, 0.2, 0.2, 0};
  SECTION("exact hit is a TP") {
    auto m = fsd::match_detections({det(0, 0, 0.9, b)}, {gt(0, 0, b)}, 0.5, 0);
    REQUIRE(m.is_tp == std::vector<char>{1});
  }
  SECTION("duplicate on a matched gt is an FP") {
    auto m = fsd::match_detections({det(0, 0, 0.9, b), det(0, 0, 0.8, b)},
                                   {gt(0, 0, b)}, 0.5, 0);
    REQUIRE(m.is_tp == std::vector<char>{1, 0});
  }
  SECTION("class and image boundaries respected") {
    auto m = fsd::match_detections({det(0, 0, 0.9, b)}, {gt(1, 0, b)}, 0.5, 0);
    REQUIRE(m.is_tp == std::vector<char>{0});
    auto m2 = fsd::match_detections({det(0, 1, 0.9, b)}, {gt(0, 0, b)}, 0.5, 1);
    REQUIRE(m2.is_tp == std::vector<char>{0});
  }
  SECTION("3-det/2-gt fixture equals the exhaustive oracle") {
    BBox g1{0.3, 0.3, 0.2, 0.2, 0}, g2{0.7, 0.7, 0.2, 0.2, 0};
    BBox near_g1{0.32, 0.3, 0.2, 0.2, 0};
    std::vector<EvalDetection> dets = {det(0, 0, 0.9, near_g1),
                                       det(0, 0, 0.8, g1),
                                       det(0, 0, 0.7, g2)};
    std::vector<EvalGroundTruth> gts = {gt(0, 0, g1), gt(0, 0, g2)};
    auto fast = fsd::match_detections(dets, gts, 0.5, 0);
    auto slow = oracles::brute_match(dets, gts, 0.5, 0);
    REQUIRE(fast.is_tp == slow);
    REQUIRE(fast.is_tp == std::vector<char>{1, 0, 1});
  }
}

TEST_CASE("matching equals the brute-force oracle on random instances") {
  fsd::Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EvalDetection> dets;
    std::vector<EvalGroundTruth> gts;
    const int images = 3;
    for (int i = 0; i < 12; ++i) {
      BBox b;
      b.cx = rng.uniform(0.2, 0.8);
      b.cy = rng.uniform(0.2, 0.8);
      b.w = rng.uniform(0.1, 0.4);
      b.h = rng.uniform(0.1, 0.4);
      gts.push_back(gt(int(rng.uniform_int(0, images - 1)),
                       int(rng.uniform_int(0, 1)), b));
    }
    for (int i = 0; i < 25; ++i) {
      BBox b;
      b.cx = rng.uniform(0.2, 0.8);
      b.cy = rng.uniform(0.2, 0.8);
      b.w = rng.uniform(0.1, 0.4);
      b.h = rng.uniform(0.1, 0.4);
      dets.push_back(det(int(rng.uniform_int(0, images - 1)),
                         int(rng.uniform_int(0, 1)), rng.uniform(0.05, 1.0),
                         b));
    }
    for (int cls = 0; cls < 2; ++cls) {
      std::vector<size_t> slow_order;
      auto slow = oracles::brute_match(dets, gts, 0.5, cls, &slow_order);
      auto fast = fsd::match_detections(dets, gts, 0.5, cls);
      REQUIRE(fast.is_tp == slow);
      REQUIRE(fast.order == slow_order);
    }
  }
}

TEST_CASE("voc_ap trivial cases") {
  REQUIRE(fsd::voc_ap({1}, 1) == 1.0);
  REQUIRE(fsd::voc_ap({0}, 1) == 0.0);
  REQUIRE(fsd::voc_ap({}, 2) == 0.0);
  REQUIRE_THROWS_AS(fsd::voc_ap({1}, 0), std::invalid_argument);
}

TEST_CASE("voc_ap matches the hand-integrated 5-det/3-gt fixture") {
  // flags in score order: TP FP TP FP TP over 3 gts
  // precision envelope area: 1/3*1 + 1/3*(2/3) + 1/3*(3/5) = 34/45
  const std::vector<char> flags = {1, 0, 1, 0, 1};
  REQUIRE(fsd::voc_ap(flags, 3) == Catch::Approx(34.0 / 45.0).margin(1e-12));

  SECTION("geometric version through the full pipeline") {
    BBox g1{0.2, 0.2, 0.15, 0.15, 0}, g2{0.6, 0.6, 0.15, 0.15, 0},
        g3{0.85, 0.2, 0.1, 0.1, 0};
    BBox nowhere{0.4, 0.85, 0.05, 0.05, 0};
    std::vector<EvalDetection> dets = {
        det(0, 0, 0.9, g1),       det(0, 0, 0.8, nowhere),
        det(0, 0, 0.7, g2),       det(0, 0, 0.6, g2),
        det(0, 0, 0.5, g3),
    };
    std::vector<EvalGroundTruth> gts = {gt(0, 0, g1), gt(0, 0, g2),
                                        gt(0, 0, g3)};
    auto m = fsd::match_detections(dets, gts, 0.5, 0);
    REQUIRE(m.is_tp == std::vector<char>{1, 0, 1, 0, 1});
    REQUIRE(fsd::voc_ap(m.is_tp, m.num_gts) ==
            Catch::Approx(34.0 / 45.0).margin(1e-12));
  }
  SECTION("eleven-point mode differs but stays in range") {
    const double ap11 = fsd::voc_ap(flags, 3, fsd::ApMode::kElevenPoint);
    REQUIRE(ap11 >= 0.0);
    REQUIRE(ap11 <= 1.0);
  }
}

TEST_CASE("map averages per-class AP over annotated classes") {
  BBox b0{0.3, 0.3, 0.2, 0.2, 0}, b1{0.7, 0.7, 0.2, 0.2, 1};
  std::vector<EvalDetection> dets = {det(0, 0, 0.9, b0), det(0, 1, 0.8, b1)};
  std::vector<EvalGroundTruth> gts = {gt(0, 0, b0), gt(0, 1, b1)};
  auto result = fsd::evaluate_map(dets, gts);
  REQUIRE(result.map == 1.0);
  REQUIRE(result.per_class.size() == 2);

  SECTION("class without ground truth is skipped") {
    std::vector<EvalGroundTruth> fire_only = {gt(0, 0, b0)};
    auto r2 = fsd::evaluate_map(dets, fire_only);
    REQUIRE(r2.map == 1.0);
    REQUIRE(r2.per_class[1].num_gts == 0);
  }
  SECTION("no ground truth at all is an error") {
    REQUIRE_THROWS_AS(fsd::evaluate_map(dets, {}), std::invalid_argument);
  }
}

TEST_CASE("ap monotonicity and range") {
  fsd::Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = int(rng.uniform_int(1, 20));
    const int64_t gts = rng.uniform_int(1, 10);
    std::vector<char> flags;
    int64_t tp = 0;
    for (int i = 0; i < n; ++i) {
      const bool f = rng.bernoulli(0.5) && tp < gts;
      if (f) ++tp;
      flags.push_back(f ? 1 : 0);
    }
    const double ap = fsd::voc_ap(flags, gts);
    REQUIRE(ap >= 0.0);
    REQUIRE(ap <= 1.0);
    if (tp < gts) {
      // a fresh correct detection at top score never decreases AP
      std::vector<char> better = {1};
      better.insert(better.end(), flags.begin(), flags.end());
      REQUIRE(fsd::voc_ap(better, gts) >= ap - 1e-12);
    }
  }
}

TEST_CASE("tied scores keep input order") {
  BBox g1{0.3, 0.3, 0.2, 0.2, 0};
  BBox near1{0.31, 0.3, 0.2, 0.2, 0};
  std::vector<EvalDetection> dets = {det(0, 0, 0.5, near1), det(0, 0, 0.5, g1)};
  std::vector<EvalGroundTruth> gts = {gt(0, 0, g1)};
  auto m = fsd::match_detections(dets, gts, 0.5, 0);
  REQUIRE(m.order == std::vector<size_t>{0, 1});
  REQUIRE(m.is_tp == std::vector<char>{1, 0});
}
