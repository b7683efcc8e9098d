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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dad/attacks.hpp"
#include "dad/config.hpp"
#include "dad/correction.hpp"
#include "dad/data.hpp"
#include "dad/detector.hpp"
#include "json.hpp"

namespace dad {

/// Clean probability for each sample of a batch.
using CleanScorer = std::function<std::vector<double>(const ImageBatch&)>;

CleanScorer detector_scorer(const TargetDetector& detector);
CleanScorer constant_scorer(double p_clean);

/// Hard detection: p >= 0.5 becomes 1, anything else 0.
std::vector<double> harden(std::span<const double> p_clean);

struct StageTimes {
  double detect = 0;
  double sweep = 0;
  double correct = 0;
  double classify = 0;
  double total = 0;

  StageTimes& operator+=(const StageTimes& o);
};

struct DefenseOptions {
  DefenseMode mode = DefenseMode::kSoft;
  CorrectionConfig correction;
  std::uint64_t seed = 0;  // random-radius draws
};

struct DefenseOutput {
  std::vector<int> predictions;
  std::vector<double> p_clean;  // values handed to the correction
  std::vector<double> radii;    // r_star, or the drawn radius in random-radius mode
  std::vector<CorrectionResult> traces;
  ImageBatch corrected;
  StageTimes times;
};

/// Detect, correct and classify an unlabeled batch. The target model is only
/// queried, never modified; its stochastic mode is restored on return.
DefenseOutput defend(Classifier& model, const CleanScorer& detector, const ImageBatch& batch,
                     const DefenseOptions& opts = {});

struct RandomRadiusOutput {
  std::vector<int> predictions;
  std::vector<double> radii;
};

/// Low-pass each sample at a radius drawn uniformly from the sweep radii.
RandomRadiusOutput random_radius_baseline(const Classifier& model, const ImageBatch& batch, std::uint64_t seed,
                                          std::size_t radius_step = 2);

/// Labeled evaluation data. Labels stay in the harness; defend() never sees them.
struct EvalSet {
  ImageBatch clean;
  std::vector<int> clean_labels;
  ImageBatch adversarial;
  std::vector<int> adversarial_labels;
  ImageBatch adversarial_origin;  // clean counterpart of each adversarial sample
  std::vector<std::string> attack_tags;
  nlohmann::json provenance;
};

/// Subsamples `clean` and the adversarial half of `adv` to ratio_clean:ratio_adv
/// using as many samples as possible. `adv_labels` are the true labels of adv.
EvalSet build_eval_set(const LabeledImages& clean, const AdversarialSet& adv, std::span<const int> adv_labels,
                       std::size_t ratio_clean, std::size_t ratio_adv, std::uint64_t seed);

/// Adversarial samples whose clean counterpart is classified correctly and
/// whose perturbed version is not.
std::vector<bool> strict_adversarial_mask(const Classifier& model, const EvalSet& set);

/// Accuracies in percent. NaN marks a metric without samples.
struct ViewMetrics {
  std::string name;
  std::size_t clean_count = 0;
  std::size_t adv_count = 0;
  double td_clean = 0;
  double td_adv = 0;
  double co_a = 0;
  double cb_clean = 0;
  double cb_adv = 0;
  double baseline_clean = 0;
  double baseline_adv = 0;
  double random_co_a = 0;  // mean over trials
  std::vector<double> random_co_a_trials;
};

struct RadiusAccuracy {
  double radius = 0;
  double clean = 0;
  double adv = 0;
};

struct DefenseReport {
  DefenseMode mode = DefenseMode::kSoft;
  ViewMetrics all;     // every perturbed sample
  ViewMetrics strict;  // only adversarials that fool a correctly classified input
  double runtime_seconds = 0;
  StageTimes stages;  // defend() over clean + adversarial samples
  std::vector<RadiusAccuracy> radius_curve;
  nlohmann::json config;
};

struct EvaluateOptions {
  DefenseOptions defense;
  std::size_t random_trials = 5;
  bool radius_curve = false;
};

DefenseReport evaluate(Classifier& model, const CleanScorer& detector, const EvalSet& set,
                       const EvaluateOptions& opts = {});

struct BenchRecord {
  std::size_t samples = 0;
  StageTimes times;
};

/// Times defend() over n samples drawn cyclically from `pool`.
BenchRecord bench_runtime(Classifier& model, const CleanScorer& detector, const ImageBatch& pool, std::size_t n,
                          const DefenseOptions& opts = {});

nlohmann::json to_json(const StageTimes& t);
nlohmann::json to_json(const DefenseReport& r);
DefenseReport report_from_json(const nlohmann::json& j);

/// CSV header used by emit_report.
extern const std::vector<std::string> kReportColumns;

/// Writes report.json, report.csv and, when requested and a radius curve is
/// present, plots/accuracy_vs_radius.png.
void emit_report(const DefenseReport& report, const std::filesystem::path& dir, bool plots = false);

}  // namespace dad
