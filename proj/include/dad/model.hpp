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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "dad/nn.hpp"
#include "dad/rng.hpp"
#include "dad/tensor.hpp"

namespace dad {

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Opaque pre-trained image classifier.
///
/// forward() is deterministic while stochastic mode is off. Inference calls
/// may run concurrently; toggling stochastic mode waits for in-flight calls and
/// blocks new ones until it completes.
class Classifier {
 public:
  virtual ~Classifier() = default;

  virtual std::size_t num_classes() const = 0;
  virtual std::size_t input_side() const = 0;
  virtual std::size_t input_channels() const = 0;
  virtual bool stochastic_capable() const = 0;

  /// One logit row per sample. In stochastic mode, dropout draws from
  /// `rngs` (one stream, or one per sample); an internal stream is used when
  /// none is given.
  Logits forward(const ImageBatch& batch, std::span<Rng> rngs = {}) const;

  /// Labels for `trials` consecutive stochastic forwards, result[t][i].
  /// Requires stochastic mode; per-sample streams advance trial by trial.
  std::vector<std::vector<int>> stochastic_labels(const ImageBatch& batch, std::size_t trials,
                                                  std::span<Rng> rngs) const;

  /// Gradient of the summed cross-entropy w.r.t. the input, always computed
  /// with stochastic behavior off.
  ImageBatch loss_input_gradient(const ImageBatch& batch, std::span<const int> labels) const;

  void set_stochastic_mode(bool enabled);
  bool stochastic_mode() const;
  void seed_internal_stream(std::uint64_t seed);

  /// Model calls since construction (each forward or trial counts once per batch).
  std::uint64_t call_count() const { return calls_.load(); }

 protected:
  Classifier() = default;
  Classifier(const Classifier& other) : stochastic_(other.stochastic_), fallback_(other.fallback_) {}
  Classifier& operator=(const Classifier& other) {
    stochastic_ = other.stochastic_;
    fallback_ = other.fallback_;
    return *this;
  }

  void check_batch(const ImageBatch& batch) const;

  virtual Logits do_forward(const ImageBatch& batch, bool stochastic, std::span<Rng> rngs) const = 0;
  virtual std::vector<std::vector<int>> do_stochastic_labels(const ImageBatch& batch, std::size_t trials,
                                                             std::span<Rng> rngs) const;
  virtual ImageBatch do_input_gradient(const ImageBatch& batch, std::span<const int> labels) const;
  virtual void check_ready() const {}

 private:
  mutable std::shared_mutex mode_mutex_;
  bool stochastic_ = false;
  mutable std::mutex fallback_mutex_;
  mutable Rng fallback_{0x5eed};
  mutable std::atomic<std::uint64_t> calls_{0};
};

std::vector<int> predict_labels(const Classifier& model, const ImageBatch& batch);
Matrix predict_proba(const Classifier& model, const ImageBatch& batch);

/// Sidecar metadata stored next to a checkpoint.
struct ModelMetadata {
  std::string architecture_name;
  std::string architecture_id;  // hash of the layer descriptor
  std::size_t num_classes = 0;
  std::size_t input_side = 0;
  std::size_t input_channels = 1;
  bool stochastic_capable = false;
  std::optional<double> injected_dropout_rate;
  std::optional<std::size_t> injected_dropout_position;
  std::string dataset_id;
};

std::string architecture_hash(const std::string& descriptor);

/// Classifier backed by an nn::Sequential network.
class NetworkClassifier final : public Classifier {
 public:
  NetworkClassifier() = default;
  NetworkClassifier(nn::Sequential net, ModelMetadata meta);
  NetworkClassifier(const NetworkClassifier& other);
  NetworkClassifier& operator=(const NetworkClassifier& other);

  static NetworkClassifier from_checkpoint(const std::filesystem::path& path);

  std::size_t num_classes() const override { return meta_.num_classes; }
  std::size_t input_side() const override { return meta_.input_side; }
  std::size_t input_channels() const override { return meta_.input_channels; }
  bool stochastic_capable() const override { return meta_.stochastic_capable; }

  bool loaded() const { return loaded_; }
  const nn::Sequential& network() const { return net_; }
  nn::Sequential& mutable_network() { return net_; }
  const ModelMetadata& metadata() const { return meta_; }
  ModelMetadata& mutable_metadata() { return meta_; }
  std::uint64_t checksum() const { return net_.checksum(); }

  /// Inserts a dropout layer in front of the final linear layer, making a
  /// model without native dropout usable for stochastic inference.
  void inject_dropout(double rate);

 protected:
  Logits do_forward(const ImageBatch& batch, bool stochastic, std::span<Rng> rngs) const override;
  std::vector<std::vector<int>> do_stochastic_labels(const ImageBatch& batch, std::size_t trials,
                                                     std::span<Rng> rngs) const override;
  ImageBatch do_input_gradient(const ImageBatch& batch, std::span<const int> labels) const override;
  void check_ready() const override;

 private:
  nn::Sequential net_;
  ModelMetadata meta_;
  bool loaded_ = false;
};

void save_checkpoint(const NetworkClassifier& model, const std::filesystem::path& path);
/// Loads into `model`; if it already holds a network the architectures must match.
void load_checkpoint(NetworkClassifier& model, const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

/// Small CNN for square single- or multi-channel images: two conv/pool stages,
/// a 64-unit hidden layer, optional dropout before the classifier.
nn::Sequential make_small_cnn(std::size_t channels, std::size_t side, std::size_t classes,
                              double dropout_rate);

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool cosine_schedule = false;
  double validation_fraction = 0.1;
  double min_validation_accuracy = 0.0;
  std::uint64_t seed = 0;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_train_accuracy;
  double validation_accuracy = 0.0;
};

/// Minimizes cross-entropy with SGD; the net must already be initialized.
/// Throws TrainingError on a non-finite loss or when validation accuracy stays
/// under the configured floor.
TrainLog train_network(nn::Sequential& net, const ImageBatch& images, std::span<const int> labels,
                       const TrainConfig& cfg,
                       const std::function<void(std::size_t, double)>& on_epoch = {});

double accuracy(std::span<const int> predicted, std::span<const int> truth);

}  // namespace dad
