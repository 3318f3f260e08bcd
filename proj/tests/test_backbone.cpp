#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fsdnet/backbone.hpp"
#include "testutil.hpp"

using fsd::BackboneConfig;
using fsd::ParamStore;
using fsd::Shape;
using fsd::Tensor;

TEST_CASE("dense layer channel arithmetic") {
  ParamStore store;
  fsd::Rng rng(1);
  fsd::DenseLayer layer(store, "dl", 16, 8, rng);
  Tensor x = testutil::random_tensor({1, 16, 6, 6}, rng);
  Tensor y = layer(x, true);
  REQUIRE(y.shape().c == 24);
  REQUIRE(y.shape().h == 6);

  SECTION("layer inputs inside a block grow by the growth rate") {
    ParamStore s2;
    fsd::DenseBlock block(s2, "b", 16, 4, 8, rng);
    Tensor t = testutil::random_tensor({1, 16, 4, 4}, rng);
    int64_t expect = 16;
    for (const auto& l : block.layers) {
      REQUIRE(l.bottleneck.weight.shape().c == expect);
      t = l(t, true);
      expect += 8;
      REQUIRE(t.shape().c == expect);
    }
    REQUIRE(block.out_channels == 16 + 4 * 8);
  }
}

TEST_CASE("dense layer with zero conv weights passes input through") {
  ParamStore store;
  fsd::Rng rng(2);
  fsd::DenseLayer layer(store, "dl", 4, 3, rng);
  std::fill(layer.bottleneck.weight.data().begin(),
            layer.bottleneck.weight.data().end(), 0.0);
  std::fill(layer.conv.weight.data().begin(), layer.conv.weight.data().end(),
            0.0);
  std::fill(layer.conv.bias.data().begin(), layer.conv.bias.data().end(), 0.7);
  Tensor x = testutil::random_tensor({1, 4, 5, 5}, rng);
  Tensor y = layer(x, true);
  REQUIRE(y.shape().c == 7);
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t j = 0; j < 5; ++j)
        REQUIRE(y.at(0, c, i, j) == x.at(0, c, i, j));
  // fresh channels are the bias maps, constant per channel
  for (int64_t c = 4; c < 7; ++c) {
    const double v = y.at(0, c, 0, 0);
    for (int64_t i = 0; i < 5; ++i)
      for (int64_t j = 0; j < 5; ++j) REQUIRE(y.at(0, c, i, j) == v);
  }
}

TEST_CASE("transition matches conv + pool composition") {
  ParamStore store;
  fsd::Rng rng(3);
  fsd::Transition t(store, "t", 8, 4, rng);
  Tensor x = testutil::random_tensor({1, 8, 32, 32}, rng);
  Tensor y = t(x);
  REQUIRE(y.shape() == Shape{1, 4, 16, 16});

  Tensor composed =
      fsd::max_pool(fsd::conv2d(x, t.conv.weight, t.conv.bias, 1, 0), 2, 2, 0);
  REQUIRE(y.data() == composed.data());

  SECTION("output channels ignore input width") {
    ParamStore s2;
    fsd::Transition t2(s2, "t", 31, 4, rng);
    Tensor x2 = testutil::random_tensor({1, 31, 8, 8}, rng);
    REQUIRE(t2(x2).shape().c == 4);
  }
}

TEST_CASE("backbone taps have strides 8/16/32") {
  ParamStore store;
  fsd::Rng rng(4);
  BackboneConfig cfg;
  fsd::Backbone bb(store, cfg, rng);
  Tensor img = testutil::random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);
  fsd::FeatureTaps taps = bb.forward(img, true);
  REQUIRE(taps.large.shape().h == 8);
  REQUIRE(taps.mid.shape().h == 4);
  REQUIRE(taps.small.shape().h == 2);
  REQUIRE(taps.large.shape().c == bb.large_channels());
  REQUIRE(taps.mid.shape().c == bb.mid_channels());
  REQUIRE(taps.small.shape().c == bb.small_channels());
  // desk preset channel bookkeeping: 16 -> 48 -> 24 -> 56 -> 28 -> 14 -> 46
  REQUIRE(bb.large_channels() == 24);
  REQUIRE(bb.mid_channels() == 28);
  REQUIRE(bb.small_channels() == 46);

  SECTION("non-square or wrong-channel input rejected") {
    Tensor bad = testutil::random_tensor({1, 1, 64, 64}, rng);
    REQUIRE_THROWS_AS(bb.forward(bad, true), std::invalid_argument);
    Tensor small = testutil::random_tensor({1, 3, 32, 32}, rng);
    REQUIRE_THROWS_AS(bb.forward(small, true), std::invalid_argument);
  }

  SECTION("two passes with the same weights produce identical taps") {
    fsd::FeatureTaps again = bb.forward(img, true);
    REQUIRE(taps.small.data() == again.small.data());
    REQUIRE(taps.mid.data() == again.mid.data());
    REQUIRE(taps.large.data() == again.large.data());
  }
}

TEST_CASE("backbone uses only 1x1 and 3x3 kernels") {
  ParamStore store;
  fsd::Rng rng(5);
  BackboneConfig cfg;
  fsd::Backbone bb(store, cfg, rng);
  int audited = 0;
  for (const auto& e : store.entries()) {
    if (e.name.find(".weight") == std::string::npos) continue;
    const Shape s = e.tensor.shape();
    REQUIRE(s.h == s.w);
    REQUIRE((s.h == 1 || s.h == 3));
    ++audited;
  }
  REQUIRE(audited > 10);
}

TEST_CASE("stacked 3x3 convs use fewer parameters than one 7x7") {
  // same receptive field: three 3x3 layers vs one 7x7, equal channels
  const int64_t c = 64;
  const int64_t stacked = 3 * (3 * 3 * c * c);
  const int64_t single = 7 * 7 * c * c;
  REQUIRE(stacked < single);
  const double reduction = 1.0 - double(stacked) / double(single);
  INFO("parameter reduction: " << reduction * 100.0 << "%");
  REQUIRE(reduction == Catch::Approx(0.449).margin(0.01));
}

TEST_CASE("dense connectivity reaches every later layer") {
  ParamStore store;
  fsd::Rng rng(6);
  fsd::DenseBlock block(store, "b", 8, 4, 4, rng);
  Tensor x = testutil::random_tensor({1, 8, 4, 4}, rng);
  x.set_requires_grad(true);

  std::vector<Tensor> states;
  states.push_back(x);
  Tensor t = x;
  for (const auto& l : block.layers) {
    t = l(t, true);
    states.push_back(t);
  }
  // gradient of the last layer's fresh channels w.r.t. every earlier state
  const int64_t growth = 4;
  Tensor fresh = fsd::slice_channels(t, t.shape().c - growth, t.shape().c);
  fsd::sum(fresh).backward();
  for (size_t i = 0; i + 1 < states.size(); ++i) {
    REQUIRE(states[i].has_grad());
    double peak = 0.0;
    for (double g : states[i].grad()) peak = std::max(peak, std::abs(g));
    REQUIRE(peak > 1e-12);
  }
}

TEST_CASE("paper-scale config keeps the tap contract") {
  ParamStore store;
  fsd::Rng rng(7);
  BackboneConfig cfg;
  cfg.stem_channels = 24;
  cfg.growth_rate = 12;
  cfg.layers_per_block = {6, 8, 10};
  cfg.input_size = 96;
  fsd::Backbone bb(store, cfg, rng);
  Tensor img = testutil::random_tensor({1, 3, 96, 96}, rng, 0.0, 1.0);
  fsd::FeatureTaps taps = bb.forward(img, false);
  REQUIRE(taps.large.shape().h == 12);
  REQUIRE(taps.mid.shape().h == 6);
  REQUIRE(taps.small.shape().h == 3);
  REQUIRE(taps.large.shape().c == (24 + 6 * 12) / 2);
}

TEST_CASE("backbone config validation") {
  BackboneConfig cfg;
  cfg.input_size = 48;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.input_size = 64;
  cfg.growth_rate = 0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}
