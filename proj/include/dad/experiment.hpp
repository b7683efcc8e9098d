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

#include <filesystem>
#include <memory>
#include <optional>

#include "dad/config.hpp"
#include "dad/data.hpp"
#include "dad/detector.hpp"
#include "dad/pipeline.hpp"
#include "json.hpp"

namespace dad {

/// Directory holding the bundled datasets: $DAD_DATA_DIR, else the source tree's data/.
std::filesystem::path bundled_data_dir();

/// Unlabeled images from an (N, C, w, w) .npy file, an adversarial-set
/// directory (its adversarial half), a flat directory of PNGs, or any source
/// ingest_dataset() accepts. Images are conformed to channels x side.
ImageBatch load_image_input(const std::filesystem::path& source, std::size_t channels, std::size_t side);

/// Small CNN with dropout 0.25 in front of the classifier, stochastic-capable.
NetworkClassifier train_target_classifier(const LabeledImages& data, const TrainConfig& cfg, TrainLog* log = nullptr);

/// The desk experiment as a chain of cached stages. Every artifact is written
/// under the config's output directory and reloaded on later calls when
/// `reuse` is set.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg, bool reuse = true);

  const ExperimentConfig& config() const { return cfg_; }

  const LabeledImages& target_train();
  /// Held-out target split, subsampled to eval_size.
  const LabeledImages& target_eval();
  const LabeledImages& arbitrary_data();

  NetworkClassifier& target_model();
  std::shared_ptr<NetworkClassifier> shared_target_model();
  const NetworkClassifier& arbitrary_model();
  const DetectionHead& source_head();
  /// Configured attack mix applied to target_eval().
  const AdversarialSet& target_attacks();
  const EvalSet& eval_set();
  /// Source head adapted on the unlabeled evaluation mix.
  const TargetDetector& target_detector();

  DefenseReport evaluate(DefenseMode mode, bool radius_curve = false);

  /// Accuracies and logs gathered along the way.
  const nlohmann::json& summary() const { return summary_; }

  std::filesystem::path attacks_dir() const;
  std::filesystem::path report_dir(DefenseMode mode) const;

 private:
  void load_target_splits();

  ExperimentConfig cfg_;
  bool reuse_;
  nlohmann::json summary_ = nlohmann::json::object();
  std::optional<LabeledImages> target_train_, target_eval_, arbitrary_;
  std::shared_ptr<NetworkClassifier> target_model_;
  std::optional<NetworkClassifier> arbitrary_model_;
  std::optional<DetectionHead> source_head_;
  std::optional<AdversarialSet> attacks_;
  std::optional<EvalSet> eval_set_;
  std::optional<TargetDetector> target_detector_;
};

}  // namespace dad
