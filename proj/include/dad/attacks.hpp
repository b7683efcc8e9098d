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
#include <optional>
#include <string>
#include <vector>

#include "dad/model.hpp"
#include "dad/tensor.hpp"

namespace dad {

enum class AttackKind { kFgsm, kBim, kPgd, kExternal };

std::string to_string(AttackKind kind);
/// Throws ConfigError for unknown names.
AttackKind parse_attack_kind(const std::string& name);

/// l-infinity attack parameters; pixel scale is [0, 1].
struct AttackConfig {
  AttackKind kind = AttackKind::kPgd;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  std::size_t num_steps = 10;
  bool random_start = true;
  std::uint64_t seed = 0;
  /// .npy file with pre-perturbed inputs for the external slot.
  std::filesystem::path external_path;

  void validate() const;
  std::string tag() const;

  static AttackConfig fgsm(double epsilon);
  static AttackConfig bim(double epsilon, double step, std::size_t steps);
  static AttackConfig pgd(double epsilon, double step, std::size_t steps, std::uint64_t seed = 0);
  static AttackConfig external(const std::filesystem::path& path, double epsilon);
};

/// Untargeted attacks against the model's own predictions.
ImageBatch fgsm(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg);
ImageBatch bim(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg);
ImageBatch pgd(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg);
/// Dispatches on cfg.kind. `first_index` offsets per-sample random streams so
/// attacking a slice matches attacking the whole batch.
ImageBatch run_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                      std::size_t first_index = 0);
/// Loads and bound-checks perturbed inputs for the external slot.
ImageBatch load_external_batch(const AttackConfig& cfg, const ImageBatch& clean);

struct AdversarialSet {
  ImageBatch clean;
  ImageBatch adversarial;
  std::vector<std::string> attack_tags;
  std::vector<double> epsilons;
  std::optional<std::vector<bool>> fooled_mask;
  std::vector<AttackConfig> configs;
  std::uint64_t seed = 0;

  std::size_t size() const { return clean.size(); }
  AdversarialSet select(std::span<const std::size_t> indices) const;
};

AdversarialSet make_adversarial_set(const Classifier& model, const ImageBatch& clean, const AttackConfig& cfg);

/// Sets fooled_mask[i] = label(adv_i) != label(clean_i).
AdversarialSet filter_fooling(const Classifier& model, AdversarialSet set);
/// Strict view keeping only samples that fool the model (requires the mask).
AdversarialSet fooled_only(const AdversarialSet& set);

/// Counts per part by the largest-remainder rule; sums to n.
std::vector<std::size_t> partition_counts(std::size_t n, std::span<const double> proportions);

/// Shuffles the batch with `seed`, splits it by `proportions` and attacks each
/// part with its config. Output keeps the original sample order.
AdversarialSet build_mixed_attack_set(const Classifier& model, const ImageBatch& clean,
                                      const std::vector<AttackConfig>& configs,
                                      const std::vector<double>& proportions, std::uint64_t seed);

/// Directory layout: clean.npy, adversarial.npy, manifest.json.
void save_adversarial_set(const AdversarialSet& set, const std::filesystem::path& dir);
AdversarialSet load_adversarial_set(const std::filesystem::path& dir);

}  // namespace dad
