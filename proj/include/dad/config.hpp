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
#include <string>
#include <vector>

#include "json.hpp"

#include "dad/attacks.hpp"
#include "dad/correction.hpp"
#include "dad/detector.hpp"
#include "dad/model.hpp"

namespace dad {

// JSON forms of the configuration structs. Readers start from the struct
// defaults, accept partial objects, and throw ConfigError on unknown keys or
// mistyped values.

nlohmann::json to_json(const AttackConfig& c);
nlohmann::json to_json(const SsimConfig& c);
nlohmann::json to_json(const CorrectionConfig& c);
nlohmann::json to_json(const AdaptationConfig& c);
nlohmann::json to_json(const HeadTrainConfig& c);
nlohmann::json to_json(const TrainConfig& c);

AttackConfig attack_config_from_json(const nlohmann::json& j);
SsimConfig ssim_config_from_json(const nlohmann::json& j);
CorrectionConfig correction_config_from_json(const nlohmann::json& j);
AdaptationConfig adaptation_config_from_json(const nlohmann::json& j);
HeadTrainConfig head_train_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

enum class DefenseMode { kSoft, kHard, kCorrectionOnly, kRandomRadius };

std::string to_string(DefenseMode m);
/// soft | hard | correction-only | random-radius
DefenseMode parse_defense_mode(const std::string& name);

struct WeightedAttack {
  AttackConfig attack;
  double proportion = 1.0;
};

/// 10 epochs with a cosine learning-rate schedule.
inline TrainConfig desk_training() {
  TrainConfig c;
  c.epochs = 10;
  c.cosine_schedule = true;
  return c;
}

/// Everything a desk experiment needs. Paths left empty resolve under
/// output_dir (see resolved()).
struct ExperimentConfig {
  std::string target_dataset;              // empty: bundled digits
  std::string arbitrary_dataset = "apparel";  // "apparel" or a dataset path
  double target_train_fraction = 0.6;
  std::size_t arbitrary_samples_per_class = 300;
  std::size_t eval_size = 1000;  // 0: whole evaluation split

  std::filesystem::path target_model;
  std::filesystem::path arbitrary_model;
  std::filesystem::path source_detector;
  std::filesystem::path target_detector;
  std::filesystem::path output_dir = "dad-output";

  std::vector<WeightedAttack> attacks = {{AttackConfig{}, 1.0}};
  std::size_t ratio_clean = 1;
  std::size_t ratio_adv = 1;
  DefenseMode mode = DefenseMode::kSoft;
  std::size_t descriptor_length = 10;
  std::size_t random_trials = 5;
  bool only_fooled_source_pairs = false;
  bool plots = false;

  TrainConfig target_training = desk_training();
  TrainConfig arbitrary_training = desk_training();
  HeadTrainConfig head_training;
  AdaptationConfig adaptation;
  CorrectionConfig correction;
  std::uint64_t seed = 0;

  void validate() const;
  /// Copy with empty model/detector paths filled in under output_dir. A
  /// relative output_dir is placed under $DAD_HOME when that is set.
  ExperimentConfig resolved() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace dad
