// Copyright 2026 The DAD Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dad/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "test_support.hpp"

namespace dad::nn {
namespace {

using dad::testing::central_difference;
using dad::testing::close_relative;
using dad::testing::random_tensor;

// Scalar probe: weighted sum of outputs, so every output element matters.
double probe(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * w.data[i];
  return s;
}

void check_layer_gradients(Layer& layer, Tensor x, const Mode& mode, double rel = 1e-5) {
  Rng init(7);
  layer.initialize(init);
  Cache cache;
  const Tensor y = layer.forward(x, mode, {}, &cache);
  const Tensor w = random_tensor(y.shape, 99);
  std::vector<double> grad(layer.params().size(), 0.0);
  const Tensor gin = layer.backward(w, cache, grad);

  auto f = [&]() { return probe(layer.forward(x, mode, {}, nullptr), w); };
  for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 23)) {
    const double fd = central_difference(f, x.data[i]);
    EXPECT_TRUE(close_relative(gin.data[i], fd, rel, 1e-7)) << "input " << i << ": " << gin.data[i] << " vs " << fd;
  }
  auto params = layer.params();
  for (std::size_t i = 0; i < params.size(); i += std::max<std::size_t>(1, params.size() / 29)) {
    const double fd = central_difference(f, params[i]);
    EXPECT_TRUE(close_relative(grad[i], fd, rel, 1e-7)) << "param " << i << ": " << grad[i] << " vs " << fd;
  }
}

TEST(LinearTest, MatchesExplicitProduct) {
  Linear lin(3, 2);
  auto p = lin.params();
  const double w[3][2] = {{1, -2}, {0.5, 4}, {3, 0}};
  for (int i = 0; i < 3; ++i)
    for (int o = 0; o < 2; ++o) lin.weight(i, o) = w[i][o];
  lin.bias(0) = 0.25;
  lin.bias(1) = -1;
  Tensor x({2, 3}, {1, 2, 3, -1, 0, 2});
  const Tensor y = lin.forward(x, kInference, {}, nullptr);
  for (int r = 0; r < 2; ++r)
    for (int o = 0; o < 2; ++o) {
      double expect = lin.bias(o);
      for (int i = 0; i < 3; ++i) expect += x.data[r * 3 + i] * w[i][o];
      EXPECT_DOUBLE_EQ(y.data[r * 2 + o], expect);
    }
  EXPECT_EQ(p.size(), 8u);
}

TEST(LayerGradientTest, Linear) {
  Linear lin(5, 4);
  check_layer_gradients(lin, random_tensor({3, 5}, 1), kInference);
}

TEST(LayerGradientTest, WeightNormLinear) {
  WeightNormLinear lin(5, 4);
  check_layer_gradients(lin, random_tensor({3, 5}, 2), kInference);
}

TEST(LayerGradientTest, BatchNormBatchStatistics) {
  BatchNorm1d bn(4);
  Rng rng(3);
  for (auto& v : bn.params()) v = uniform(rng, 0.5, 1.5);
  check_layer_gradients(bn, random_tensor({6, 4}, 4), Mode{true, false});
}

TEST(LayerGradientTest, BatchNormRunningStatistics) {
  BatchNorm1d bn(4);
  check_layer_gradients(bn, random_tensor({3, 4}, 5), kInference);
}

TEST(LayerGradientTest, Conv2d) {
  Conv2d conv(2, 3, 3, 1);
  check_layer_gradients(conv, random_tensor({2, 2, 5, 5}, 6), kInference);
}

TEST(LayerGradientTest, MaxPoolAndRelu) {
  MaxPool2d pool(2);
  check_layer_gradients(pool, random_tensor({2, 2, 4, 4}, 8), kInference);
  ReLU relu;
  check_layer_gradients(relu, random_tensor({4, 6}, 9), kInference);
}

TEST(DropoutTest, InactiveOutsideDropoutMode) {
  Dropout d(0.5);
  const Tensor x = random_tensor({4, 8}, 10);
  EXPECT_EQ(d.forward(x, Mode{true, false}, {}, nullptr).data, x.data);
}

TEST(DropoutTest, MasksAndRescales) {
  Dropout d(0.5);
  Tensor x({1, 1000}, 1.0);
  std::vector<Rng> rng{Rng(1)};
  const Tensor y = d.forward(x, Mode{false, true}, rng, nullptr);
  std::size_t zeros = 0;
  for (double v : y.data) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    zeros += v == 0.0;
  }
  EXPECT_GT(zeros, 400u);
  EXPECT_LT(zeros, 600u);
}

TEST(DropoutTest, RequiresStream) {
  Dropout d(0.3);
  EXPECT_THROW(d.forward(Tensor({1, 4}, 1.0), Mode{false, true}, {}, nullptr), StateError);
}

TEST(DropoutTest, PerRowStreamsIndependentOfBatchComposition) {
  Dropout d(0.4);
  const Tensor x = random_tensor({3, 16}, 11);
  std::vector<Rng> batch_streams{Rng(1), Rng(2), Rng(3)};
  const Tensor all = d.forward(x, Mode{false, true}, batch_streams, nullptr);
  std::vector<Rng> single{Rng(2)};
  const Tensor row1 = d.forward(Tensor({1, 16}, std::vector<double>(x.row(1).begin(), x.row(1).end())),
                                Mode{false, true}, single, nullptr);
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(all.data[16 + k], row1.data[k]);
}

TEST(SequentialTest, SaveLoadRoundtripIsBitwise) {
  Sequential net;
  net.add(std::make_unique<Linear>(4, 6))
      .add(std::make_unique<ReLU>())
      .add(std::make_unique<BatchNorm1d>(6))
      .add(std::make_unique<WeightNormLinear>(6, 3));
  Rng rng(5);
  net.initialize(rng);
  const Tensor x = random_tensor({5, 4}, 12);
  std::stringstream ss;
  net.save(ss);
  const Sequential back = Sequential::load(ss);
  EXPECT_EQ(back.descriptor(), net.descriptor());
  EXPECT_EQ(back.checksum(), net.checksum());
  EXPECT_EQ(back.forward(x, kInference).data, net.forward(x, kInference).data);
}

TEST(SequentialTest, LoadRejectsGarbage) {
  std::stringstream ss("definitely not a network");
  EXPECT_THROW(Sequential::load(ss), DecodeError);
}

TEST(SequentialTest, EndToEndGradient) {
  Sequential net;
  net.add(std::make_unique<Conv2d>(1, 2, 3, 1))
      .add(std::make_unique<ReLU>())
      .add(std::make_unique<MaxPool2d>(2))
      .add(std::make_unique<Flatten>())
      .add(std::make_unique<Linear>(8, 3));
  Rng rng(1);
  net.initialize(rng);
  Tensor x = random_tensor({2, 1, 4, 4}, 13);
  const std::vector<int> labels{0, 2};
  std::vector<Cache> caches;
  const Tensor z = net.forward(x, kInference, {}, &caches);
  const auto lg = cross_entropy(Matrix::from_tensor(z), labels);
  Gradients g = net.zero_gradients();
  const Tensor gin = net.backward(lg.grad.to_tensor(), caches, g);
  auto f = [&]() { return cross_entropy(Matrix::from_tensor(net.forward(x, kInference)), labels).loss; };
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_TRUE(close_relative(gin.data[i], central_difference(f, x.data[i]), 1e-5, 1e-8));
  }
}

TEST(SgdTest, FrozenLayersUntouched) {
  Sequential net;
  net.add(std::make_unique<Linear>(2, 2)).add(std::make_unique<Linear>(2, 2));
  Rng rng(2);
  net.initialize(rng);
  const std::vector<double> before(net.layer(1).params().begin(), net.layer(1).params().end());
  Gradients g = net.zero_gradients();
  for (auto& layer : g)
    for (auto& v : layer) v = 1.0;
  Sgd opt(0.1);
  opt.step(net, g, {false, true});
  EXPECT_EQ(std::vector<double>(net.layer(1).params().begin(), net.layer(1).params().end()), before);
  EXPECT_NE(net.layer(0).params()[0], 0.0);
}

TEST(SoftmaxTest, RowsSumToOne) {
  Matrix z(3, 4);
  Rng rng(3);
  for (auto& v : z.data) v = normal(rng, 0, 10);
  const Matrix p = softmax(z);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0;
    for (double v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

}  // namespace
}  // namespace dad::nn
