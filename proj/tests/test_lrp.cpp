#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "usc/errors.hpp"
#include "usc/lrp.hpp"
#include "usc/model.hpp"
#include "usc/rng.hpp"

using namespace usc;
using namespace usc::lrp;
using nn::Tensor;

namespace {

dsp::FeatureImage const_image(int side, float value) {
  dsp::FeatureImage img;
  img.side = side;
  img.pixels.assign(static_cast<std::size_t>(side) * side * 3, value);
  return img;
}

dsp::FeatureImage random_image(int side, std::uint64_t seed) {
  Xoshiro256ss rng(seed);
  dsp::FeatureImage img;
  img.side = side;
  img.pixels.resize(static_cast<std::size_t>(side) * side * 3);
  for (int i = 0; i < side * side; ++i) {
    const auto v = static_cast<float>(rng.next_double());
    for (int ch = 0; ch < 3; ++ch) img.pixels[static_cast<std::size_t>(i) * 3 + ch] = v;
  }
  return img;
}

double sum(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0);
}

double sum(const Tensor<double>& t) {
  return std::accumulate(t.data.begin(), t.data.end(), 0.0);
}

// The fixed toy network of the flat-rule oracle: 12 replicated inputs,
// Dense(12 -> 3) all weights 0.25, ReLU, Dense(3 -> 2) rows (1, .5, .5) and
// (.5, .25, .25). With an all-ones image: logits (6, 3).
nn::Model<double> toy_model() {
  nn::Model<double> m;
  m.input_shape = {3, 2, 2};
  auto d1 = std::make_unique<nn::Dense<double>>(12, 3);
  d1->weights().fill(0.25);
  auto d2 = std::make_unique<nn::Dense<double>>(3, 2);
  d2->weights().data = {1.0, 0.5, 0.5, 0.5, 0.25, 0.25};
  m.layers.push_back(std::move(d1));
  m.layers.push_back(std::make_unique<nn::ReLU<double>>());
  m.layers.push_back(std::move(d2));
  m.layers.push_back(std::make_unique<nn::Softmax<double>>());
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("fold_batchnorm identity statistics keep weights in place") {
  nn::ArchConfig cfg;
  cfg.image_side = 8;
  cfg.conv_channels = {3};
  cfg.dense_units = {};
  cfg.dropout = 0.0;
  cfg.classes = 2;
  auto model = nn::build_cnn<double>(cfg, 21);
  // batch-norm params stay at their initialization: gamma 1, beta 0,
  // running mean 0, running var 1
  const auto net = fold_batchnorm(model);

  const auto* conv_orig = static_cast<nn::Conv2D<double>*>(model.layers[0].get());
  const auto* folded = std::get_if<ConvL<double>>(&net.layers[0]);
  REQUIRE(folded != nullptr);
  for (std::size_t i = 0; i < folded->weights.numel(); ++i)
    CHECK(folded->weights[i] ==
          doctest::Approx(conv_orig->weights()[i]).epsilon(1e-5));
}

TEST_CASE("fold_batchnorm applies the scale formula") {
  nn::Model<double> m;
  m.input_shape = {1, 4, 4};
  auto conv = std::make_unique<nn::Conv2D<double>>(1, 1, 3, 1, 1);
  conv->weights().fill(1.0);
  auto bn = std::make_unique<nn::BatchNorm<double>>(1);
  bn->gamma()[0] = 2.0;
  const double eps = bn->eps();
  m.layers.push_back(std::move(conv));
  m.layers.push_back(std::move(bn));
  m.layers.push_back(std::make_unique<nn::ReLU<double>>());
  m.validate();

  const auto net = fold_batchnorm(m);
  const auto* folded = std::get_if<ConvL<double>>(&net.layers[0]);
  REQUIRE(folded != nullptr);
  for (std::size_t i = 0; i < folded->weights.numel(); ++i)
    CHECK(folded->weights[i] == 2.0 / std::sqrt(1.0 + eps));
}

TEST_CASE("fold_batchnorm preserves logits within 1e-5") {
  nn::ArchConfig cfg;
  cfg.image_side = 12;
  cfg.conv_channels = {4, 6};
  cfg.dense_units = {10};
  cfg.dropout = 0.4;
  cfg.classes = 10;
  auto model = nn::build_cnn<double>(cfg, 77);

  // push running stats away from their defaults so the fold does real work
  Xoshiro256ss rng(78);
  for (auto& layer : model.layers)
    if (layer->kind() == nn::LayerKind::BatchNorm) {
      auto* bn = static_cast<nn::BatchNorm<double>*>(layer.get());
      for (auto& v : bn->running_mean().data) v = rng.uniform(-0.5, 0.5);
      for (auto& v : bn->running_var().data) v = rng.uniform(0.5, 2.0);
      for (auto& v : bn->gamma().data) v = rng.uniform(0.5, 1.5);
      for (auto& v : bn->beta().data) v = rng.uniform(-0.3, 0.3);
    }

  const auto net = fold_batchnorm(model);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = random_image(12, seed);
    const auto original = predict_logits(model, img);
    const auto folded = forward_logits(net, to_input_tensor(net, img));
    REQUIRE(folded.numel() == original.size());
    for (std::size_t c = 0; c < original.size(); ++c)
      CHECK(std::abs(folded[c] - original[c]) < 1e-5);
  }
}

TEST_CASE("fold_batchnorm rejects batch norm without a conv") {
  nn::Model<double> m;
  m.input_shape = {2, 4, 4};
  m.layers.push_back(std::make_unique<nn::BatchNorm<double>>(2));
  m.validate();
  CHECK_THROWS_AS(fold_batchnorm(m), StructureError);
}

TEST_CASE("analyzable network omits softmax and matches the logit layer") {
  nn::ArchConfig cfg;
  cfg.image_side = 8;
  cfg.conv_channels = {2};
  cfg.dense_units = {5};
  cfg.dropout = 0.4;
  cfg.classes = 3;
  auto model = nn::build_cnn<double>(cfg, 9);
  const auto net = fold_batchnorm(model);

  for (const auto& layer : net.layers) {
    CHECK(!std::holds_alternative<DenseL<double>>(layer) ==
          (std::holds_alternative<ConvL<double>>(layer) ||
           std::holds_alternative<ReluL>(layer) || std::holds_alternative<PoolL>(layer)));
  }
  // the last analyzable layer is the logit dense layer, not a softmax
  CHECK(std::holds_alternative<DenseL<double>>(net.layers.back()));

  const auto img = random_image(8, 4);
  const auto logits = forward_logits(net, to_input_tensor(net, img));
  double lsum = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) lsum += logits[i];
  CHECK(std::abs(lsum - 1.0) > 1e-6);  // logits, not probabilities

  // softmax over the analyzable logits reproduces the model's probabilities
  const auto probs = nn::predict(model, img);
  double peak = logits[0];
  for (std::size_t i = 1; i < logits.numel(); ++i) peak = std::max(peak, logits[i]);
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.numel(); ++i) denom += std::exp(logits[i] - peak);
  for (std::size_t i = 0; i < logits.numel(); ++i)
    CHECK(std::exp(logits[i] - peak) / denom == doctest::Approx(probs[i]).epsilon(1e-9));
}

TEST_CASE("relevance_dense_wsquare examples") {
  SUBCASE("single output with weights (1, 2) splits 5 into (1, 4)") {
    Tensor<double> w({1, 2});
    w.data = {1.0, 2.0};
    const auto lower = relevance_dense_wsquare(w, {5.0});
    REQUIRE(lower.size() == 2);
    CHECK(lower[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(lower[1] == doctest::Approx(4.0).epsilon(1e-15));
  }

  SUBCASE("uniform weights redistribute uniformly") {
    Tensor<double> w({2, 5});
    w.fill(0.7);
    const auto lower = relevance_dense_wsquare(w, {3.0, 2.0});
    for (const double r : lower) CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("random layer conserves the total") {
    Xoshiro256ss rng(10);
    Tensor<double> w({4, 6});
    for (auto& v : w.data) v = rng.uniform(-1.0, 1.0);
    std::vector<double> upper = {0.3, -1.2, 2.5, 0.9};
    const auto lower = relevance_dense_wsquare(w, upper);
    CHECK(sum(lower) == doctest::Approx(sum(upper)).epsilon(1e-12));
  }

  SUBCASE("all-zero column with nonzero relevance is a loud error") {
    Tensor<double> w({2, 3});
    w.data = {0.0, 0.0, 0.0, 1.0, 2.0, 3.0};
    CHECK_THROWS_AS(relevance_dense_wsquare(w, {1.0, 1.0}), PropagationError);
    // zero relevance on the degenerate output is fine
    CHECK_NOTHROW(relevance_dense_wsquare(w, {0.0, 1.0}));
  }
}

TEST_CASE("relevance_dense_flat examples") {
  const auto one = relevance_dense_flat<double>(4, {8.0});
  CHECK(one == std::vector<double>(4, 2.0));

  const auto two = relevance_dense_flat<double>(4, {3.0, 5.0});
  CHECK(two == std::vector<double>(4, 2.0));

  Xoshiro256ss rng(11);
  std::vector<double> upper(7);
  for (auto& r : upper) r = rng.uniform(-2.0, 2.0);
  const auto lower = relevance_dense_flat(9, upper);
  CHECK(sum(lower) == doctest::Approx(sum(upper)).epsilon(1e-12));
}

TEST_CASE("relevance_conv reduces to the dense case for 1x1 kernels") {
  ConvL<double> conv;
  conv.in_ch = 1;
  conv.out_ch = 1;
  conv.kernel = 1;
  conv.stride = 1;
  conv.pad = 0;
  conv.weights = Tensor<double>({1, 1, 1, 1});
  conv.weights[0] = 0.37;
  conv.bias = Tensor<double>({1});

  Tensor<double> act({1, 1, 1});
  act[0] = 2.0;
  Tensor<double> upper({1, 1, 1});
  upper[0] = 5.0;
  for (const Rule rule : {Rule::WSquare, Rule::Flat}) {
    const auto lower = relevance_conv(conv, act, upper, rule);
    CHECK(lower[0] == doctest::Approx(5.0).epsilon(1e-15));  // all passes through
  }
}

TEST_CASE("relevance_conv flat rule matches a brute-force unrolled matrix") {
  // independent oracle: enumerate the unrolled linear map's structural
  // connections and apply the dense flat redistribution per output
  ConvL<double> conv;
  conv.in_ch = 1;
  conv.out_ch = 1;
  conv.kernel = 3;
  conv.stride = 1;
  conv.pad = 1;
  conv.weights = Tensor<double>({1, 1, 3, 3});
  Xoshiro256ss rng(12);
  for (auto& w : conv.weights.data) w = rng.uniform(-1.0, 1.0);
  conv.bias = Tensor<double>({1});

  const int h = 7, w = 7;
  Tensor<double> act({1, h, w});
  Tensor<double> upper({1, h, w});
  upper.fill(1.0);

  std::vector<double> oracle(h * w, 0.0);
  for (int oy = 0; oy < h; ++oy)
    for (int ox = 0; ox < w; ++ox) {
      std::vector<int> connected;
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int iy = oy - 1 + ky, ix = ox - 1 + kx;
          if (iy >= 0 && iy < h && ix >= 0 && ix < w) connected.push_back(iy * w + ix);
        }
      for (const int idx : connected)
        oracle[idx] += 1.0 / static_cast<double>(connected.size());
    }

  const auto lower = relevance_conv(conv, act, upper, Rule::Flat);
  for (int i = 0; i < h * w; ++i)
    CHECK(lower[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

  // pixels two or more steps from every border receive equal relevance
  // (all their covering windows are interior); corners receive less
  CHECK(lower[2 * w + 2] == doctest::Approx(lower[3 * w + 3]).epsilon(1e-12));
  CHECK(lower[2 * w + 2] == doctest::Approx(lower[4 * w + 2]).epsilon(1e-12));
  CHECK(lower[0] < lower[2 * w + 2]);
}

TEST_CASE("relevance_conv wsquare matches the unrolled-matrix oracle with borders") {
  ConvL<double> conv;
  conv.in_ch = 2;
  conv.out_ch = 3;
  conv.kernel = 3;
  conv.stride = 1;
  conv.pad = 1;
  conv.weights = Tensor<double>({3, 2, 3, 3});
  Xoshiro256ss rng(13);
  for (auto& w : conv.weights.data) w = rng.uniform(-1.0, 1.0);
  conv.bias = Tensor<double>({3});

  const int h = 4, w = 4;
  Tensor<double> act({2, h, w});
  Tensor<double> upper({3, h, w});
  for (auto& r : upper.data) r = rng.uniform(-1.0, 1.0);

  std::vector<double> oracle(2 * h * w, 0.0);
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < h; ++oy)
      for (int ox = 0; ox < w; ++ox) {
        const double r = upper[(co * h + oy) * w + ox];
        double denom = 0.0;
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy - 1 + ky, ix = ox - 1 + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              const double wv = conv.weights[((co * 2 + ci) * 3 + ky) * 3 + kx];
              denom += wv * wv;
            }
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy - 1 + ky, ix = ox - 1 + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              const double wv = conv.weights[((co * 2 + ci) * 3 + ky) * 3 + kx];
              oracle[(ci * h + iy) * w + ix] += wv * wv / denom * r;
            }
      }

  const auto lower = relevance_conv(conv, act, upper, Rule::WSquare);
  for (std::size_t i = 0; i < oracle.size(); ++i)
    CHECK(lower[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  CHECK(sum(lower) == doctest::Approx(sum(upper)).epsilon(1e-10));
}

TEST_CASE("relevance_conv conserves for both rules on a random layer") {
  ConvL<double> conv;
  conv.in_ch = 2;
  conv.out_ch = 4;
  conv.kernel = 3;
  conv.stride = 1;
  conv.pad = 1;
  conv.weights = Tensor<double>({4, 2, 3, 3});
  Xoshiro256ss rng(14);
  for (auto& w : conv.weights.data) w = rng.uniform(-1.0, 1.0);
  conv.bias = Tensor<double>({4});

  Tensor<double> act({2, 8, 8});
  Tensor<double> upper({4, 8, 8});
  for (auto& r : upper.data) r = rng.uniform(-1.0, 1.0);

  for (const Rule rule : {Rule::WSquare, Rule::Flat}) {
    const auto lower = relevance_conv(conv, act, upper, rule);
    const double diff = std::abs(sum(lower) - sum(upper));
    CHECK(diff <= 1e-10 * std::abs(sum(upper)) + 1e-14);
  }
}

TEST_CASE("relevance_maxpool routing") {
  PoolL pool{2, 2};
  Tensor<double> act({1, 2, 2});
  act.data = {1.0, 2.0, 3.0, 4.0};
  Tensor<double> upper({1, 1, 1});
  upper[0] = 10.0;
  const auto lower = relevance_maxpool(pool, act, upper);
  CHECK(lower.data == std::vector<double>{0.0, 0.0, 0.0, 10.0});

  act.fill(5.5);  // tie: relevance goes to the top-left element
  const auto tied = relevance_maxpool(pool, act, upper);
  CHECK(tied.data == std::vector<double>{10.0, 0.0, 0.0, 0.0});

  Xoshiro256ss rng(15);
  Tensor<double> big_act({3, 6, 6});
  for (auto& v : big_act.data) v = rng.next_double();
  Tensor<double> big_upper({3, 3, 3});
  for (auto& v : big_upper.data) v = rng.uniform(-1.0, 1.0);
  const auto routed = relevance_maxpool(pool, big_act, big_upper);
  CHECK(sum(routed) == doctest::Approx(sum(big_upper)).epsilon(1e-12));
}

TEST_CASE("analyze returns a zero map for a zero target logit") {
  auto model = toy_model();
  auto net = fold_batchnorm(model);
  // all-zero image with zero biases: every logit is exactly zero
  const auto img = const_image(2, 0.0f);
  const auto map = analyze(net, img, 1, Rule::Flat);
  for (const double v : map.values) CHECK(v == 0.0);
  for (const double v : map.raw) CHECK(v == 0.0);
  CHECK(map.raw_total == 0.0);
}

TEST_CASE("analyze matches the hand-computed flat back-projection exactly") {
  auto model = toy_model();
  auto net = fold_batchnorm(model);
  const auto img = const_image(2, 1.0f);

  // hand derivation: logits (6, 3); target 0 seeds 6; Dense(3->2) flat
  // gives 2 per hidden unit; ReLU passes; Dense(12->3) flat gives
  // 6/12 = 0.5 per input; channel sum = 1.5 per pixel; normalized to 1.
  const auto map = analyze(net, img, 0, Rule::Flat);
  REQUIRE(map.values.size() == 4);
  for (const double v : map.raw) CHECK(v == 1.5);
  for (const double v : map.values) CHECK(v == 1.0);
  CHECK(map.raw_total == 6.0);

  // target 1 seeds 3: same uniform projection scaled down
  const auto map1 = analyze(net, img, 1, Rule::Flat);
  for (const double v : map1.raw) CHECK(v == 0.75);
  for (const double v : map1.values) CHECK(v == 1.0);
}

TEST_CASE("analyze conserves the target logit through deep stacks") {
  nn::ArchConfig cfg;
  cfg.image_side = 12;
  cfg.conv_channels = {3, 4};
  cfg.dense_units = {8};
  cfg.dropout = 0.4;
  cfg.classes = 5;
  auto model = nn::build_cnn<double>(cfg, 31);
  auto net = fold_batchnorm(model);
  const auto img = random_image(12, 6);
  const auto logits = forward_logits(net, to_input_tensor(net, img));

  for (const Rule rule : {Rule::Flat, Rule::WSquare}) {
    for (int target = 0; target < 5; ++target) {
      const auto map = analyze(net, img, target, rule);
      if (logits[target] == 0.0) continue;
      CHECK(map.raw_total ==
            doctest::Approx(logits[target]).epsilon(rule == Rule::Flat ? 1e-12 : 1e-6));
    }
  }
}

TEST_CASE("analyze rejects an out-of-range target") {
  auto model = toy_model();
  auto net = fold_batchnorm(model);
  const auto img = const_image(2, 0.5f);
  CHECK_THROWS_AS(analyze(net, img, 2, Rule::Flat), ParamError);
  CHECK_THROWS_AS(analyze(net, img, -1, Rule::Flat), ParamError);
}

TEST_CASE("flat rule is data-independent on a pool-free network") {
  auto model = toy_model();
  auto net = fold_batchnorm(model);

  const auto img_a = random_image(2, 1);
  const auto img_b = random_image(2, 2);
  const auto trace_a = forward_trace(net, to_input_tensor(net, img_a));
  const auto trace_b = forward_trace(net, to_input_tensor(net, img_b));

  // same seed value on the same structure: identical maps despite the
  // different inputs
  const auto rel_a = propagate(net, trace_a, 0, 4.2, RuleSpec(Rule::Flat));
  const auto rel_b = propagate(net, trace_b, 0, 4.2, RuleSpec(Rule::Flat));
  CHECK(rel_a.data == rel_b.data);
}

TEST_CASE("normalized maps are invariant to positive seed scaling") {
  auto model = toy_model();
  auto net = fold_batchnorm(model);
  const auto img = random_image(2, 3);
  const auto trace = forward_trace(net, to_input_tensor(net, img));

  for (const Rule rule : {Rule::Flat, Rule::WSquare}) {
    const auto r1 = propagate(net, trace, 0, 1.0, RuleSpec(rule));
    const auto r3 = propagate(net, trace, 0, 3.0, RuleSpec(rule));
    double n1 = 0.0, n3 = 0.0;
    for (std::size_t i = 0; i < r1.numel(); ++i) {
      n1 = std::max(n1, std::abs(r1[i]));
      n3 = std::max(n3, std::abs(r3[i]));
    }
    REQUIRE(n1 > 0.0);
    for (std::size_t i = 0; i < r1.numel(); ++i)
      CHECK(r1[i] / n1 == doctest::Approx(r3[i] / n3).epsilon(1e-12));
  }
}

TEST_CASE("per-layer rule overrides change only the overridden layers") {
  nn::ArchConfig cfg;
  cfg.image_side = 8;
  cfg.conv_channels = {2};
  cfg.dense_units = {8};
  cfg.dropout = 0.0;
  cfg.classes = 3;
  auto model = nn::build_cnn<double>(cfg, 55);
  auto net = fold_batchnorm(model);
  const auto img = random_image(8, 9);

  RuleSpec mixed(Rule::WSquare);
  mixed.overrides[0] = Rule::Flat;  // flat at the input convolution only
  const auto map_mixed = analyze(net, img, 0, mixed);
  const auto map_pure = analyze(net, img, 0, RuleSpec(Rule::WSquare));
  REQUIRE(map_pure.raw_total != 0.0);  // live logit, otherwise both maps are zero
  CHECK(map_mixed.mixed_rules);
  CHECK(!map_pure.mixed_rules);
  bool differs = false;
  for (std::size_t i = 0; i < map_mixed.raw.size(); ++i)
    if (map_mixed.raw[i] != map_pure.raw[i]) differs = true;
  CHECK(differs);
}

TEST_CASE("average_maps basics") {
  auto model = toy_model();
  auto net = fold_batchnorm(model);
  const auto img = random_image(2, 21);
  const auto map = analyze(net, img, 0, Rule::Flat, "sample-0");

  SUBCASE("singleton average is the map itself") {
    const auto avg = average_maps<double>({map}, 0);
    CHECK(avg.values == map.values);
    CHECK(avg.raw == map.raw);
    CHECK(avg.source == "class-average");
  }

  SUBCASE("a map and its negation cancel") {
    auto negated = map;
    for (auto& v : negated.raw) v = -v;
    for (auto& v : negated.values) v = -v;
    const auto avg = average_maps<double>({map, negated}, 0);
    for (const double v : avg.raw) CHECK(v == 0.0);
    for (const double v : avg.values) CHECK(v == 0.0);
  }

  SUBCASE("averaging ten identical maps is the identity") {
    const auto avg = average_maps<double>(std::vector<RelevanceMap>(10, map), 0);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
      CHECK(avg.values[i] == doctest::Approx(map.values[i]).epsilon(1e-12));
      CHECK(avg.raw[i] == doctest::Approx(map.raw[i]).epsilon(1e-12));
    }
  }

  SUBCASE("mixed classes or rules are rejected") {
    auto other = analyze(net, img, 1, Rule::Flat);
    CHECK_THROWS_AS(average_maps<double>({map, other}, 0), ParamError);
    auto wsq = analyze(net, img, 0, Rule::WSquare);
    CHECK_THROWS_AS(average_maps<double>({map, wsq}, 0), ParamError);
    CHECK_THROWS_AS(average_maps<double>({}, 0), ParamError);
  }
}

TEST_CASE("overlay palette and blending") {
  RelevanceMap map;
  map.side = 2;
  map.values = {1.0, 0.0, -1.0, 0.5};
  map.raw = map.values;

  dsp::FeatureImage img;
  img.side = 2;
  img.pixels.assign(12, 0.0f);
  img.pixels[0] = img.pixels[1] = img.pixels[2] = 0.25f;  // pixel (0,0)

  SUBCASE("alpha 0 reproduces the spectrogram render") {
    const auto rgb = overlay(map, img, 0.0);
    CHECK(rgb.rgb[0] == io::to_byte(0.25f));
    CHECK(rgb.rgb[1] == io::to_byte(0.25f));
    CHECK(rgb.rgb[2] == io::to_byte(0.25f));
    CHECK(rgb.rgb[3] == 0);  // zero-valued spectrogram pixel
  }

  SUBCASE("alpha 1 paints the pure palette") {
    const auto rgb = overlay(map, img, 1.0);
    // max positive -> pure red
    CHECK(rgb.rgb[0] == 255);
    CHECK(rgb.rgb[1] == 0);
    CHECK(rgb.rgb[2] == 0);
    // zero -> white
    CHECK(rgb.rgb[3] == 255);
    CHECK(rgb.rgb[4] == 255);
    CHECK(rgb.rgb[5] == 255);
    // max negative -> pure blue
    CHECK(rgb.rgb[6] == 0);
    CHECK(rgb.rgb[7] == 0);
    CHECK(rgb.rgb[8] == 255);
  }

  SUBCASE("alpha 1 on an all-zero map is pure white") {
    RelevanceMap zero;
    zero.side = 2;
    zero.values.assign(4, 0.0);
    zero.raw.assign(4, 0.0);
    const auto rgb = overlay(zero, img, 1.0);
    for (const auto b : rgb.rgb) CHECK(b == 255);
  }

  SUBCASE("invalid alpha is rejected") {
    CHECK_THROWS_AS(overlay(map, img, -0.1), ParamError);
    CHECK_THROWS_AS(overlay(map, img, 1.5), ParamError);
  }
}
