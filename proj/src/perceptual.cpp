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

#include "dad/perceptual.hpp"

#include <cmath>

#include "dad/error.hpp"

namespace dad {

void SsimConfig::validate() const {
  if (window_size == 0 || window_size % 2 == 0) throw ConfigError("ssim window size must be odd and positive");
  if (!(gaussian_sigma > 0.0)) throw ConfigError("ssim sigma must be positive");
  if (!(dynamic_range > 0.0)) throw ConfigError("ssim dynamic range must be positive");
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += w[i];
  }
  for (auto& v : w) v /= sum;
  return w;
}

namespace {

// Separable 'valid' filtering of one plane: rows first, then columns.
std::vector<double> filter_valid(const double* src, std::size_t side, const std::vector<double>& taps) {
  const std::size_t k = taps.size();
  const std::size_t out = side - k + 1;
  std::vector<double> tmp(side * out);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < out; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += taps[t] * src[y * side + x + t];
      tmp[y * out + x] = s;
    }
  std::vector<double> res(out * out);
  for (std::size_t y = 0; y < out; ++y)
    for (std::size_t x = 0; x < out; ++x) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += taps[t] * tmp[(y + t) * out + x];
      res[y * out + x] = s;
    }
  return res;
}

double ssim_plane(const double* a, const double* b, std::size_t side, const SsimConfig& cfg) {
  const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2);
  const double c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
  std::vector<double> taps;
  if (cfg.window_size <= side)
    taps = gaussian_window(cfg.window_size, cfg.gaussian_sigma);
  else
    taps.assign(side, 1.0 / static_cast<double>(side));

  const std::size_t n = side * side;
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, side, taps);
  const auto mu_b = filter_valid(b, side, taps);
  const auto e_aa = filter_valid(aa.data(), side, taps);
  const auto e_bb = filter_valid(bb.data(), side, taps);
  const auto e_ab = filter_valid(ab.data(), side, taps);

  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma;
    const double vb = e_bb[i] - mb * mb;
    const double cov = e_ab[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace

double ssim(std::span<const double> a, std::span<const double> b, std::size_t channels, std::size_t side,
            const SsimConfig& cfg) {
  cfg.validate();
  if (a.size() != b.size() || a.size() != channels * side * side)
    throw InputError("ssim: image shapes differ");
  const std::size_t plane = side * side;
  double sum = 0.0;
  for (std::size_t c = 0; c < channels; ++c) sum += ssim_plane(a.data() + c * plane, b.data() + c * plane, side, cfg);
  return sum / static_cast<double>(channels);
}

std::vector<double> ssim(const ImageBatch& a, const ImageBatch& b, const SsimConfig& cfg) {
  if (a.size() != b.size() || a.channels() != b.channels() || a.side() != b.side())
    throw InputError("ssim: batch shapes differ");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = ssim(a.sample(i), b.sample(i), a.channels(), a.side(), cfg);
  return out;
}

double disc_score(std::span<const double> original, std::span<const double> low_passed, std::size_t channels,
                  std::size_t side, const SsimConfig& cfg) {
  return (ssim(original, low_passed, channels, side, cfg) + 1.0) / 2.0;
}

std::vector<double> disc_score(const ImageBatch& original, const ImageBatch& low_passed, const SsimConfig& cfg) {
  auto s = ssim(original, low_passed, cfg);
  for (auto& v : s) v = (v + 1.0) / 2.0;
  return s;
}

}  // namespace dad
