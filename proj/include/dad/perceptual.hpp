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

#include <span>
#include <vector>

#include "dad/tensor.hpp"

namespace dad {

struct SsimConfig {
  std::size_t window_size = 11;
  double gaussian_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;
};

/// Mean SSIM over the 'valid' window positions, averaged over channels.
/// Images smaller than the window use one uniform window spanning the image.
double ssim(std::span<const double> a, std::span<const double> b, std::size_t channels, std::size_t side,
            const SsimConfig& cfg = {});
std::vector<double> ssim(const ImageBatch& a, const ImageBatch& b, const SsimConfig& cfg = {});

/// SSIM mapped from [-1, 1] onto [0, 1].
double disc_score(std::span<const double> original, std::span<const double> low_passed, std::size_t channels,
                  std::size_t side, const SsimConfig& cfg = {});
std::vector<double> disc_score(const ImageBatch& original, const ImageBatch& low_passed,
                               const SsimConfig& cfg = {});

/// Normalized 1-d Gaussian taps.
std::vector<double> gaussian_window(std::size_t size, double sigma);

}  // namespace dad
