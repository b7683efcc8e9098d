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
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "dad/model.hpp"
#include "dad/perceptual.hpp"
#include "dad/tensor.hpp"

namespace dad {

struct CorrectionConfig {
  std::size_t count = 10;       // dropout trials per radius
  std::size_t radius_step = 2;  // sweep r = step, 2*step, ... <= w/2
  SsimConfig ssim;
  std::uint64_t seed = 0;  // base of the per-sample dropout streams

  void validate() const;
};

struct RadiusScore {
  double radius = 0;
  double disc = 0;
  double advcont = 0;
  std::size_t lcr = 0;
};

struct CorrectionResult {
  double p_clean = 0;
  int prediction = -1;  // deterministic label of the input
  double r_min = 0;
  double r_prime = 0;
  double r_star = 0;
  bool sweep_skipped = false;  // r_min already covers the whole sweep
  bool pass_through = false;   // r_star keeps every frequency bin
  std::vector<RadiusScore> per_radius;
  std::vector<double> corrected;  // left empty by best_radius and correct_batch
};

/// Number of `count` stochastic forwards of a single image whose label
/// differs from `original_pred`. The model must be in stochastic mode.
std::size_t label_change_rate(const Classifier& model, std::span<const double> image, int original_pred,
                              std::size_t count, Rng& rng);

/// (count - lcr) / count.
double advcont_score(std::size_t lcr, std::size_t count);

/// floor(w * p_clean).
double radius_floor(std::size_t side, double p_clean);

/// Radii visited by the sweep for side w.
std::vector<double> sweep_radii(std::size_t side, std::size_t step);

/// Dropout stream seed for an image, derived from its pixel values so results
/// do not depend on batch position.
std::uint64_t image_seed(std::span<const double> image, std::uint64_t base);

/// Runs the radius search on one image. Temporarily enables stochastic mode.
CorrectionResult best_radius(Classifier& model, std::span<const double> image, double p_clean,
                             const CorrectionConfig& cfg = {});

/// best_radius followed by the low-pass at r_star; result.corrected is filled.
CorrectionResult correct(Classifier& model, std::span<const double> image, double p_clean,
                         const CorrectionConfig& cfg = {});

struct CorrectionTiming {
  double sweep_seconds = 0;   // deterministic prediction plus the radius sweep
  double filter_seconds = 0;  // spectra and final low-pass at r_star
};

struct CorrectedBatch {
  ImageBatch images;
  std::vector<CorrectionResult> results;
};

/// Batched correction, sample-wise identical to correct(). Each radius step
/// runs one batched stochastic pass over the samples still sweeping.
CorrectedBatch correct_batch(Classifier& model, const ImageBatch& batch, std::span<const double> p_clean,
                             const CorrectionConfig& cfg = {}, CorrectionTiming* timing = nullptr);

/// Upper bound on model calls per sample.
std::size_t forward_budget(std::size_t side, const CorrectionConfig& cfg);

/// One JSON object per line: index, p_clean, pred, r_min, r_prime, r_star,
/// skipped, pass_through, per_radius [{r, disc, advcont, lcr}].
void write_trace(std::ostream& out, std::span<const CorrectionResult> results);
void write_trace(const std::filesystem::path& path, std::span<const CorrectionResult> results);

}  // namespace dad
