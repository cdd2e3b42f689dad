#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "faultrange/error.hpp"
#include "faultrange/graph.hpp"
#include "faultrange/layers.hpp"
#include "faultrange/rng.hpp"
#include "faultrange/trainer.hpp"
#include "fixture.hpp"

namespace faultrange {
namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t item, float lo = -1.0f, float hi = 1.0f) {
  CounterRng rng({99, StreamPurpose::dataset, 7, item});
  Tensor t(shape);
  for (float& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Layer with_params(LayerSpec spec, std::uint64_t item) {
  Layer l = make_layer(std::move(spec));
  for (std::size_t s = 0; s < l.params.size(); ++s) l.params[s] = random_tensor(l.params[s].shape(), item + s);
  return l;
}

TEST(Layers, Conv2dIdentityKernel) {
  Layer conv = make_layer(Conv2d{1, 1, 1, 1, 1, 0, false});
  conv.params[0][0] = 1.0f;
  const Tensor x = random_tensor({1, 5, 4}, 1);
  EXPECT_TRUE(layer_forward(conv, x).bit_equal(x));
}

TEST(Layers, Conv2dMatchesOracle) {
  Layer conv = make_layer(Conv2d{2, 2, 2, 2, 1, 1, true});
  Tensor x({2, 3, 3});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(i) * 0.25f - 1.0f;
  for (std::size_t i = 0; i < 16; ++i) conv.params[0][i] = (static_cast<float>(i) - 7.5f) * 0.125f;
  conv.params[1][0] = 0.5f;
  conv.params[1][1] = -0.25f;
  const Tensor y = layer_forward(conv, x);
  ASSERT_EQ(y.shape(), (Shape{2, 4, 4}));
  const std::vector<float> expected{
      0.984375f, 1.28125f, 0.90625f,  0.515625f,  0.9375f,   0.6875f,   -0.3125f, -0.4375f,
      -0.375f,   -2.3125f, -3.3125f,  -2.125f,    -0.765625f, -2.71875f, -3.34375f, -1.859375f,
      0.484375f, 1.53125f, 2.15625f,  1.015625f,  2.1875f,   4.9375f,   5.9375f,  2.8125f,
      3.875f,    7.9375f,  8.9375f,   4.125f,     1.734375f, 3.53125f,  3.90625f, 1.640625f};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(y[i], expected[i]) << i;
}

TEST(Layers, LinearMatchesOracle) {
  Layer lin = make_layer(Linear{3, 2, true});
  lin.params[0] = Tensor({2, 3}, {0.5f, -1.0f, 2.0f, 0.25f, 0.125f, -0.5f});
  lin.params[1] = Tensor::from({0.1f, -0.2f});
  const Tensor y = layer_forward(lin, Tensor::from({1.0f, 2.0f, 3.0f}));
  EXPECT_EQ(y[0], 4.6f);
  EXPECT_EQ(y[1], -1.2f);
}

TEST(Layers, PoolingAndRelu) {
  const Tensor x({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(layer_forward(make_layer(AvgPool2d{2, 2}), x)[0], 2.5f);
  EXPECT_EQ(layer_forward(make_layer(MaxPool2d{2, 2}), x)[0], 4.0f);
  const Tensor r = layer_forward(make_layer(Relu{}), Tensor::from({-1.0f, 0.0f, 3.0f}));
  EXPECT_EQ(r.data()[0], 0.0f);
  EXPECT_EQ(r.data()[1], 0.0f);
  EXPECT_EQ(r.data()[2], 3.0f);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  EXPECT_TRUE(std::isnan(layer_forward(make_layer(MaxPool2d{2, 2}), Tensor({1, 2, 2}, {1, nan, 3, 4}))[0]));
}

TEST(Layers, BatchNormInference) {
  Layer bn = make_layer(BatchNorm2d{2, 0.0f});
  bn.params[0] = Tensor::from({2.0f, 1.0f});   // gamma
  bn.params[1] = Tensor::from({0.5f, -1.0f});  // beta
  bn.params[2] = Tensor::from({1.0f, 0.0f});   // running mean
  bn.params[3] = Tensor::from({4.0f, 1.0f});   // running var
  const Tensor y = layer_forward(bn, Tensor({2, 1, 2}, {3, 5, 2, -2}));
  EXPECT_EQ(y[0], 2.5f);
  EXPECT_EQ(y[1], 4.5f);
  EXPECT_EQ(y[2], 1.0f);
  EXPECT_EQ(y[3], -3.0f);
}

TEST(Layers, OutputShapes) {
  EXPECT_EQ(output_shape(Conv2d{1, 6, 5, 5}, {1, 28, 28}), (Shape{6, 24, 24}));
  EXPECT_EQ(output_shape(Conv2d{3, 4, 3, 3, 2, 1}, {3, 9, 9}), (Shape{4, 5, 5}));
  EXPECT_EQ(output_shape(MaxPool2d{}, {6, 24, 24}), (Shape{6, 12, 12}));
  EXPECT_EQ(output_shape(Flatten{}, {16, 4, 4}), (Shape{256}));
  EXPECT_THROW(output_shape(Conv2d{2, 6, 5, 5}, {1, 28, 28}), Error);
  EXPECT_THROW(output_shape(Linear{10, 2}, {11}), Error);
  EXPECT_THROW(output_shape(Conv2d{1, 1, 5, 5}, {1, 4, 4}), Error);
  EXPECT_EQ(param_slots(Conv2d{1, 6, 5, 5, 1, 0, true})[0].shape, (Shape{6, 1, 5, 5}));
}

ModelGraph tiny_model() {
  std::vector<Layer> layers;
  layers.push_back(with_params(Conv2d{1, 2, 3, 3}, 10));
  layers.push_back(make_layer(Relu{}));
  layers.push_back(make_layer(Flatten{}));
  layers.push_back(with_params(Linear{2 * 2 * 2, 3}, 20));
  return ModelGraph::create({1, 4, 4}, std::move(layers), {"a", "b", "c"}, {1, 2});
}

TEST(Graph, CreateValidates) {
  std::vector<Layer> bad;
  bad.push_back(make_layer(Flatten{}));
  bad.push_back(make_layer(Linear{5, 2}));
  EXPECT_THROW(ModelGraph::create({4, 1, 1}, bad, {"a", "b"}, {}), Error);
  std::vector<Layer> ok;
  ok.push_back(make_layer(Flatten{}));
  ok.push_back(make_layer(Linear{4, 2}));
  EXPECT_NO_THROW(ModelGraph::create({4, 1, 1}, ok, {"a", "b"}, {1}));
  EXPECT_THROW(ModelGraph::create({4}, ok, {"a", "b"}, {1}), Error);
  EXPECT_THROW(ModelGraph::create({4, 1, 1}, ok, {"a", "b", "c"}, {1}), Error);
  EXPECT_THROW(ModelGraph::create({4, 1, 1}, ok, {"a", "b"}, {2}), Error);
  std::vector<Layer> two;
  two.push_back(make_layer(Flatten{}));
  two.push_back(make_layer(Linear{4, 4}));
  two.push_back(make_layer(Linear{4, 2}));
  EXPECT_THROW(ModelGraph::create({4, 1, 1}, two, {"a", "b"}, {2, 1}), Error);
  EXPECT_THROW(ModelGraph::create({4, 1, 1}, two, {"a", "b"}, {1, 1}), Error);
  std::vector<Layer> wrong_params;
  wrong_params.push_back(make_layer(Flatten{}));
  wrong_params.push_back(make_layer(Linear{4, 2}));
  wrong_params[1].params[0] = Tensor({2, 5});
  EXPECT_THROW(ModelGraph::create({4, 1, 1}, wrong_params, {"a", "b"}, {}), Error);
}

TEST(Graph, NanWeightRaisesDueAtFirstLayer) {
  ModelGraph m = tiny_model();
  m.mutable_param(0, 0)[4] = std::numeric_limits<float>::quiet_NaN();
  const auto out = forward(m, random_tensor({1, 4, 4}, 3, 0.1f, 1.0f));
  ASSERT_TRUE(out.is_due());
  EXPECT_EQ(out.due().layer_index, 0u);
  EXPECT_EQ(out.due().kind, NonFiniteKind::nan);
}

TEST(Graph, ZeroingHookLeavesFinalBias) {
  const ModelGraph m = tiny_model();
  const LayerHook zero = [](std::size_t layer, Tensor& t) {
    if (layer < 3) for (float& v : t.data()) v = 0.0f;
  };
  const auto out = forward(m, random_tensor({1, 4, 4}, 4), std::span(&zero, 1));
  ASSERT_FALSE(out.is_due());
  EXPECT_TRUE(out.scores().bit_equal(m.layer(3).params[1]));
}

TEST(Graph, HooksRunInOrderBeforeTheNonFiniteScan) {
  const ModelGraph m = tiny_model();
  std::vector<LayerHook> hooks;
  hooks.push_back([](std::size_t layer, Tensor& t) {
    if (layer == 1) t[0] = std::numeric_limits<float>::infinity();
  });
  hooks.push_back([](std::size_t layer, Tensor& t) {
    if (layer == 1) t[0] = 0.0f;
  });
  EXPECT_FALSE(forward(m, random_tensor({1, 4, 4}, 5), hooks).is_due());
  hooks.pop_back();
  const auto out = forward(m, random_tensor({1, 4, 4}, 5), hooks);
  ASSERT_TRUE(out.is_due());
  EXPECT_EQ(out.due().layer_index, 1u);
  EXPECT_EQ(out.due().kind, NonFiniteKind::inf);
}

TEST(Graph, PredictTieBreak) {
  EXPECT_EQ(predict(Tensor::from({0.1f, 0.9f})), 1u);
  EXPECT_EQ(predict(Tensor::from({0.5f, 0.5f})), 0u);
}

TEST(Graph, FormatFloatRoundTrips) {
  for (float v : {0.1f, 1.0f / 3.0f, 1e-30f, 3.4e38f, -2.5f}) {
    EXPECT_EQ(std::stof(format_float(v)), v);
  }
  EXPECT_EQ(format_float(0.5f), "0.5");
}

TEST(Graph, DumpFmapsIdentityConv) {
  Layer conv = make_layer(Conv2d{1, 1, 1, 1, 1, 0, false});
  conv.params[0][0] = 1.0f;
  std::vector<Layer> layers;
  layers.push_back(conv);
  layers.push_back(make_layer(Flatten{}));
  const ModelGraph m = ModelGraph::create({1, 2, 2}, std::move(layers), {"a", "b", "c", "d"}, {});
  const auto dir = testing::scratch_dir("dump");
  const auto files = dump_fmaps(m, Tensor({1, 2, 2}, {0.5f, 1.0f, 2.0f, 0.25f}), dir);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].filename(), "layer0_ch0.txt");
  std::ifstream f(files[0]);
  std::stringstream s;
  s << f.rdbuf();
  EXPECT_EQ(s.str(), "0.5 1\n2 0.25\n");
}

// Finite-difference checks of layer_backward on L = sum(g * forward(x)).
double weighted_sum(const Layer& layer, const Tensor& x, const Tensor& g) {
  const Tensor y = layer_forward(layer, x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * g[i];
  return s;
}

void check_gradients(Layer layer, const Tensor& x) {
  const Tensor y = layer_forward(layer, x);
  const Tensor g = random_tensor(y.shape(), 77);
  std::vector<Tensor> param_grads;
  const Tensor gx = layer_backward(layer, x, y, g, &param_grads);
  const float h = 1e-2f;
  auto numeric = [&](float& slot, const Tensor& input) {
    const float saved = slot;
    slot = saved + h;
    const double up = weighted_sum(layer, input, g);
    slot = saved - h;
    const double down = weighted_sum(layer, input, g);
    slot = saved;
    return (up - down) / (2.0 * h);
  };
  Tensor xin = x;
  for (std::size_t i = 0; i < xin.size(); ++i) {
    const double n = numeric(xin[i], xin);
    EXPECT_NEAR(gx[i], n, 2e-3 + 1e-2 * std::fabs(n)) << "input " << i;
  }
  ASSERT_EQ(param_grads.size(), layer.params.size());
  for (std::size_t s = 0; s < layer.params.size(); ++s) {
    for (std::size_t i = 0; i < layer.params[s].size(); ++i) {
      const double n = numeric(layer.params[s][i], x);
      EXPECT_NEAR(param_grads[s][i], n, 2e-3 + 1e-2 * std::fabs(n)) << "slot " << s << " element " << i;
    }
  }
}

TEST(Gradients, Conv2d) { check_gradients(with_params(Conv2d{2, 3, 3, 3, 1, 1}, 30), random_tensor({2, 5, 5}, 31)); }
TEST(Gradients, Conv2dStrided) { check_gradients(with_params(Conv2d{1, 2, 2, 2, 2, 0}, 32), random_tensor({1, 6, 6}, 33)); }
TEST(Gradients, Linear) { check_gradients(with_params(Linear{7, 4}, 34), random_tensor({7}, 35)); }
TEST(Gradients, Relu) { check_gradients(make_layer(Relu{}), random_tensor({2, 3, 3}, 36)); }
TEST(Gradients, MaxPool) { check_gradients(make_layer(MaxPool2d{2, 2}), random_tensor({2, 4, 4}, 37)); }
TEST(Gradients, Flatten) { check_gradients(make_layer(Flatten{}), random_tensor({2, 2, 3}, 38)); }

TEST(Gradients, CrossEntropy) {
  Tensor grad({3});
  const float loss = cross_entropy(Tensor::from({1.0f, 2.0f, 0.5f}), 1, &grad);
  EXPECT_NEAR(loss, 0.4643687841079447, 1e-6);
  double sum = 0.0;
  for (float v : grad.data()) sum += v;
  EXPECT_NEAR(sum, 0.0, 1e-6);
  EXPECT_LT(grad[1], 0.0f);
}

}  // namespace
}  // namespace faultrange
