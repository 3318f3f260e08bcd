#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsdnet/nn.hpp"

namespace fsd {

struct BackboneConfig {
  int stem_channels = 16;
  int growth_rate = 8;
  std::array<int, 3> layers_per_block = {4, 4, 4};
  int input_size = 64;

  void validate() const {
    if (input_size < 32 || input_size % 32 != 0)
      throw std::invalid_argument("backbone: input_size must be a positive "
                                  "multiple of 32, got " +
                                  std::to_string(input_size));
    if (growth_rate < 1)
      throw std::invalid_argument("backbone: growth_rate must be >= 1");
    if (stem_channels < 1)
      throw std::invalid_argument("backbone: stem_channels must be >= 1");
    for (int l : layers_per_block)
      if (l < 1)
        throw std::invalid_argument("backbone: each block needs >= 1 layer");
  }
};

struct FeatureTaps {
  Tensor large;  // stride 8
  Tensor mid;    // stride 16
  Tensor small;  // stride 32
};

// One dense layer: BN -> leaky -> 1x1 bottleneck (4*growth) -> BN -> leaky ->
// 3x3 conv (growth), output concatenated onto the running feature map.
struct DenseLayer {
  BatchNormLayer bn1, bn2;
  Conv2dLayer bottleneck, conv;

  DenseLayer() = default;
  DenseLayer(ParamStore& store, const std::string& name, int in_c, int growth,
             Rng& rng)
      : bn1(store, name + ".bn1", in_c),
        bn2(store, name + ".bn2", 4 * growth),
        bottleneck(store, name + ".bottleneck", in_c, 4 * growth, 1, 1, rng),
        conv(store, name + ".conv", 4 * growth, growth, 3, 1, rng) {}

  Tensor operator()(const Tensor& x, bool training) const {
    Tensor h = bottleneck(leaky_relu(bn1(x, training)));
    h = conv(leaky_relu(bn2(h, training)));
    return concat_channels(x, h);
  }
};

struct DenseBlock {
  std::vector<DenseLayer> layers;
  int out_channels = 0;

  DenseBlock() = default;
  DenseBlock(ParamStore& store, const std::string& name, int in_c,
             int num_layers, int growth, Rng& rng) {
    int c = in_c;
    for (int i = 0; i < num_layers; ++i) {
      layers.emplace_back(store, name + ".layer" + std::to_string(i), c,
                          growth, rng);
      c += growth;
    }
    out_channels = c;
  }

  Tensor operator()(Tensor x, bool training) const {
    for (const auto& layer : layers) x = layer(x, training);
    return x;
  }
};

// 1x1 conv to out_channels followed by a 2x2/2 max pool; halves spatial size.
struct Transition {
  Conv2dLayer conv;

  Transition() = default;
  Transition(ParamStore& store, const std::string& name, int in_c, int out_c,
             Rng& rng)
      : conv(store, name + ".conv", in_c, out_c, 1, 1, rng) {}

  Tensor operator()(const Tensor& x) const { return max_pool(conv(x), 2, 2, 0); }

  int64_t out_channels() const { return conv.out_channels(); }
};

// Dense-connection feature extractor. Layout:
//   stem (3x3/1, 3x3/2, pool/2) -> block1 -> transition1 [tap, stride 8]
//   -> block2 -> transition2 [tap, stride 16] -> transition3 -> block3
//   [tap, stride 32]
class Backbone {
 public:
  Backbone() = default;

  Backbone(ParamStore& store, const BackboneConfig& cfg, Rng& rng)
      : cfg_(cfg) {
    cfg.validate();
    stem0_ = ConvBnLeaky(store, "backbone.stem0", 3, cfg.stem_channels, 3, 1,
                         rng);
    stem1_ = ConvBnLeaky(store, "backbone.stem1", cfg.stem_channels,
                         cfg.stem_channels, 3, 2, rng);
    int c = cfg.stem_channels;
    block1_ = DenseBlock(store, "backbone.block1", c, cfg.layers_per_block[0],
                         cfg.growth_rate, rng);
    c = block1_.out_channels;
    trans1_ = Transition(store, "backbone.trans1", c, c / 2, rng);
    c = c / 2;
    large_channels_ = c;
    block2_ = DenseBlock(store, "backbone.block2", c, cfg.layers_per_block[1],
                         cfg.growth_rate, rng);
    c = block2_.out_channels;
    trans2_ = Transition(store, "backbone.trans2", c, c / 2, rng);
    c = c / 2;
    mid_channels_ = c;
    trans3_ = Transition(store, "backbone.trans3", c, c / 2, rng);
    c = c / 2;
    block3_ = DenseBlock(store, "backbone.block3", c, cfg.layers_per_block[2],
                         cfg.growth_rate, rng);
    small_channels_ = block3_.out_channels;
  }

  FeatureTaps forward(const Tensor& image, bool training) const {
    const Shape s = image.shape();
    if (s.c != 3 || s.h != s.w || s.h != cfg_.input_size)
      throw std::invalid_argument(
          "backbone: expected n x 3 x " + std::to_string(cfg_.input_size) +
          " x " + std::to_string(cfg_.input_size) + " input, got " + s.str());
    Tensor x = stem0_(image, training);
    x = max_pool(stem1_(x, training), 2, 2, 0);
    FeatureTaps taps;
    taps.large = trans1_(block1_(x, training));
    taps.mid = trans2_(block2_(taps.large, training));
    taps.small = block3_(trans3_(taps.mid), training);
    return taps;
  }

  const BackboneConfig& config() const { return cfg_; }
  int64_t large_channels() const { return large_channels_; }
  int64_t mid_channels() const { return mid_channels_; }
  int64_t small_channels() const { return small_channels_; }

 private:
  BackboneConfig cfg_;
  ConvBnLeaky stem0_, stem1_;
  DenseBlock block1_, block2_, block3_;
  Transition trans1_, trans2_, trans3_;
  int64_t large_channels_ = 0, mid_channels_ = 0, small_channels_ = 0;
};

}  // namespace fsd
