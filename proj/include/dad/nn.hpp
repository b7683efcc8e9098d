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

#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dad/rng.hpp"
#include "dad/tensor.hpp"

namespace dad::nn {

/// Which training-time behaviors a forward pass enables. They are independent:
/// stochastic inference turns on dropout while normalization keeps using its
/// running statistics.
struct Mode {
  bool batch_stats = false;
  bool dropout = false;
};

inline constexpr Mode kInference{false, false};
inline constexpr Mode kTraining{true, true};

/// Per-layer scratch recorded by forward and consumed by backward.
struct Cache {
  Tensor input;
  Tensor aux;
  std::vector<double> stats;
  std::vector<std::size_t> index;
};

using Gradients = std::vector<std::vector<double>>;

class Layer {
 public:
  virtual ~Layer() = default;

  /// Serializable architecture token, e.g. "linear 10 128".
  virtual std::string descriptor() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  /// `rngs` feeds dropout: one stream shared by all rows, or one per row.
  virtual Tensor forward(const Tensor& x, const Mode& mode, std::span<Rng> rngs,
                         Cache* cache) const = 0;
  /// Returns the input gradient and accumulates parameter gradients into `grad`
  /// (laid out like params()).
  virtual Tensor backward(const Tensor& grad_out, const Cache& cache,
                          std::span<double> grad) const = 0;

  virtual std::span<double> params() { return {}; }
  virtual std::span<const double> params() const { return {}; }
  /// Non-trainable state (normalization running statistics).
  virtual std::span<double> buffers() { return {}; }
  virtual std::span<const double> buffers() const { return {}; }
  virtual void update_statistics(const Cache&) {}
  virtual void initialize(Rng&) {}

  virtual bool is_dropout() const { return false; }
};

class Linear final : public Layer {
 public:
  /// Weights are stored (in, out) row-major followed by the bias.
  Linear(std::size_t in, std::size_t out);
  std::string descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  Tensor forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const override;
  Tensor backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const override;
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  void initialize(Rng& rng) override;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  double& weight(std::size_t i, std::size_t o) { return params_[i * out_ + o]; }
  double& bias(std::size_t o) { return params_[in_ * out_ + o]; }

 private:
  std::size_t in_, out_;
  std::vector<double> params_;
};

/// Linear layer with weight normalization: w[:, o] = g[o] * v[:, o] / |v[:, o]|.
class WeightNormLinear final : public Layer {
 public:
  WeightNormLinear(std::size_t in, std::size_t out);
  std::string descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<WeightNormLinear>(*this); }
  Tensor forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const override;
  Tensor backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const override;
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  void initialize(Rng& rng) override;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::vector<double> effective_weight(std::vector<double>* norms) const;
  std::size_t in_, out_;
  std::vector<double> params_;  // v (in, out), g (out), b (out)
};

class ReLU final : public Layer {
 public:
  std::string descriptor() const override { return "relu"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
  Tensor forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const override;
  Tensor backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const override;
};

/// Inverted dropout; active only when Mode::dropout is set.
class Dropout final : public Layer {
 public:
  explicit Dropout(double rate);
  std::string descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }
  Tensor forward(const Tensor& x, const Mode& mode, std::span<Rng> rngs, Cache* cache) const override;
  Tensor backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const override;
  bool is_dropout() const override { return true; }
  double rate() const { return rate_; }

 private:
  double rate_;
};

class BatchNorm1d final : public Layer {
 public:
  explicit BatchNorm1d(std::size_t features, double eps = 1e-5, double momentum = 0.1);
  std::string descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm1d>(*this); }
  Tensor forward(const Tensor& x, const Mode& mode, std::span<Rng>, Cache* cache) const override;
  Tensor backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const override;
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  std::span<double> buffers() override { return running_; }
  std::span<const double> buffers() const override { return running_; }
  void update_statistics(const Cache& cache) override;

 private:
  std::size_t features_;
  double eps_, momentum_;
  std::vector<double> params_;   // gamma, beta
  std::vector<double> running_;  // mean, var
};

/// Stride-1 square convolution with symmetric zero padding.
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t padding);
  std::string descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  Tensor forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const override;
  Tensor backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const override;
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  void initialize(Rng& rng) override;

 private:
  std::size_t cin_, cout_, k_, pad_;
  std::vector<double> params_;  // weights (cout, cin*k*k), bias (cout)
};

class MaxPool2d final : public Layer {
 public:
  explicit MaxPool2d(std::size_t size) : size_(size) {}
  std::string descriptor() const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  Tensor forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const override;
  Tensor backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const override;

 private:
  std::size_t size_;
};

class Flatten final : public Layer {
 public:
  std::string descriptor() const override { return "flatten"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
  Tensor forward(const Tensor& x, const Mode&, std::span<Rng>, Cache* cache) const override;
  Tensor backward(const Tensor& grad_out, const Cache& cache, std::span<double> grad) const override;
};

std::unique_ptr<Layer> make_layer(const std::string& descriptor);

class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  /// Builds layers from a descriptor produced by descriptor().
  static Sequential from_descriptor(const std::string& descriptor);

  Sequential& add(std::unique_ptr<Layer> layer);
  Sequential& insert(std::size_t position, std::unique_ptr<Layer> layer);
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  void initialize(Rng& rng);

  Tensor forward(const Tensor& x, const Mode& mode, std::span<Rng> rngs = {},
                 std::vector<Cache>* caches = nullptr) const;
  /// Runs layers [begin, end).
  Tensor forward_range(const Tensor& x, std::size_t begin, std::size_t end, const Mode& mode,
                       std::span<Rng> rngs = {}, std::vector<Cache>* caches = nullptr) const;
  Tensor backward(const Tensor& grad_out, const std::vector<Cache>& caches, Gradients& grads) const;
  Gradients zero_gradients() const;
  void update_statistics(const std::vector<Cache>& caches);

  std::string descriptor() const;
  bool has_dropout() const;
  /// Index of the first dropout layer, or size() when there is none.
  std::size_t first_dropout() const;
  std::size_t parameter_count() const;
  /// FNV-1a over every parameter and buffer.
  std::uint64_t checksum() const;

  void save(std::ostream& os) const;
  static Sequential load(std::istream& is);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// SGD with classical momentum (v = m v + g + wd p; p -= lr v).
class Sgd {
 public:
  Sgd(double learning_rate, double momentum = 0.9, double weight_decay = 0.0)
      : lr_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {}
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  /// Layers with frozen[i] == true are left untouched.
  void step(Sequential& net, const Gradients& grads, const std::vector<bool>& frozen = {});

 private:
  double lr_, momentum_, weight_decay_;
  Gradients velocity_;
};

Matrix softmax(const Matrix& logits);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;  // d loss / d logits
};

/// Mean cross-entropy over rows.
LossAndGrad cross_entropy(const Matrix& logits, std::span<const int> labels);

}  // namespace dad::nn
