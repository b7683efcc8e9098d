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
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dad/attacks.hpp"
#include "dad/data.hpp"
#include "dad/model.hpp"
#include "dad/nn.hpp"
#include "dad/tensor.hpp"

namespace dad {

inline constexpr int kCleanLabel = 0;
inline constexpr int kAdversarialLabel = 1;

/// Softmax of each row sorted descending, truncated or zero-padded to K.
Matrix canonicalize_logits(const Logits& logits, std::size_t k);

struct HeadConfig {
  std::size_t input_dim = 10;
  std::size_t hidden = 128;
  double dropout = 0.25;
};

/// Binary clean/adversarial head on logit descriptors:
///   linear-relu-dropout, linear-relu-dropout, batchnorm, weight-normed linear,
///   then the 2-way classifier.
class DetectionHead {
 public:
  static constexpr std::size_t kFeatureLayer = 7;     // weight-normed linear
  static constexpr std::size_t kClassifierLayer = 8;  // frozen during adaptation

  DetectionHead() = default;
  explicit DetectionHead(const HeadConfig& cfg);
  DetectionHead(nn::Sequential net, std::size_t input_dim);

  void initialize(Rng& rng) { net_.initialize(rng); }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t feature_dim() const;
  const nn::Sequential& network() const { return net_; }
  nn::Sequential& network() { return net_; }

  /// Inference-mode forward.
  Matrix logits(const Matrix& descriptors) const;
  Matrix probabilities(const Matrix& descriptors) const;
  /// Output of the weight-normed layer (input to the classifier).
  Matrix features(const Matrix& descriptors, const nn::Mode& mode = nn::kInference) const;

  std::uint64_t checksum() const { return net_.checksum(); }
  std::uint64_t classifier_checksum() const;
  std::string architecture_id() const;

  void save(const std::filesystem::path& path, const std::string& source_dataset_id) const;
  static DetectionHead load(const std::filesystem::path& path, std::string* source_dataset_id = nullptr);

 private:
  nn::Sequential net_;
  std::size_t input_dim_ = 0;
};

struct DetectorDataset {
  Matrix descriptors;       // (2N, K): row 2i clean, row 2i+1 its adversarial pair
  std::vector<int> labels;  // 0 = clean, 1 = adversarial
};

/// Canonical descriptors of clean samples and their attacked counterparts.
/// With only_fooled, pairs whose attack did not change the label are dropped.
DetectorDataset generate_detector_dataset(const Classifier& model, const ImageBatch& images,
                                          const AttackConfig& attack, std::size_t k, bool only_fooled = false,
                                          AdversarialSet* adversarial = nullptr);
DetectorDataset descriptor_pairs(const Classifier& model, const AdversarialSet& set, std::size_t k,
                                 bool only_fooled);

struct HeadTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct HeadTrainLog {
  std::vector<double> epoch_loss;
  double validation_accuracy = 0.0;
};

/// Cross-entropy training of a freshly initialized head.
DetectionHead train_source_head(const Matrix& descriptors, std::span<const int> labels,
                                const HeadTrainConfig& cfg, const HeadConfig& head_cfg = {},
                                HeadTrainLog* log = nullptr);

/// Mean per-row entropy (natural log, 0 log 0 = 0).
double entropy_loss(const Matrix& probs);
/// Entropy of the mean prediction.
double diversity_loss(const Matrix& probs);

/// Weighted-centroid initialization followed by rounds-1 k-means refinements
/// under cosine similarity.
std::vector<int> assign_pseudo_labels(const Matrix& features, const Matrix& probs, std::size_t rounds);

struct AdaptationConfig {
  double delta = 1.0;
  double lambda_pl = 0.3;
  std::size_t epochs = 15;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 64;
  std::size_t pseudo_rounds = 2;
  std::size_t min_mix_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdaptationLog {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // full-mix objective after each epoch
  std::vector<std::size_t> pseudo_label_changes;
};

/// Objective L_ent - delta L_div + lambda L_pseudo with its gradient w.r.t.
/// the head logits.
nn::LossAndGrad adaptation_objective(const Matrix& logits, std::span<const int> pseudo_labels,
                                     double delta, double lambda_pl);

/// Full-mix objective with batch statistics and dropout off.
double evaluate_adaptation_loss(const DetectionHead& head, const Matrix& descriptors,
                                std::span<const int> pseudo_labels, const AdaptationConfig& cfg);
std::vector<int> refresh_pseudo_labels(const DetectionHead& head, const Matrix& descriptors, std::size_t rounds);

/// Source-free adaptation of every layer except the final classifier.
DetectionHead adapt_head(const DetectionHead& source, const Matrix& descriptors, const AdaptationConfig& cfg,
                         AdaptationLog* log = nullptr);

/// Frozen target model plus adapted head. Immutable after construction.
class TargetDetector {
 public:
  TargetDetector(std::shared_ptr<const Classifier> backbone, DetectionHead head);

  const Classifier& backbone() const { return *backbone_; }
  const DetectionHead& head() const { return head_; }
  std::size_t descriptor_length() const { return head_.input_dim(); }

  Matrix descriptors(const ImageBatch& batch) const;
  /// Rows (p_clean, p_adv).
  Matrix detect(const ImageBatch& batch) const;
  std::vector<double> clean_probability(const ImageBatch& batch) const;

 private:
  std::shared_ptr<const Classifier> backbone_;
  DetectionHead head_;
};

TargetDetector adapt_target_detector(std::shared_ptr<const Classifier> target, const DetectionHead& source,
                                     const ImageBatch& unlabeled_mix, const AdaptationConfig& cfg,
                                     AdaptationLog* log = nullptr);

/// Stage-1 classifier on the arbitrary dataset.
NetworkClassifier train_arbitrary_classifier(const LabeledImages& data, const TrainConfig& cfg,
                                             TrainLog* log = nullptr);

}  // namespace dad
