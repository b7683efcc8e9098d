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

#include <complex>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "dad/tensor.hpp"

namespace dad {

using Complex = std::complex<double>;

/// Centered 2-d spectrum of one image, layout (C, w, w). After the shift the
/// DC coefficient sits at (w/2, w/2) (integer division).
struct Spectrum {
  std::size_t channels = 0;
  std::size_t side = 0;
  std::vector<Complex> coefficients;

  Spectrum() = default;
  Spectrum(std::size_t c, std::size_t w) : channels(c), side(w), coefficients(c * w * w) {}

  Complex& at(std::size_t c, std::size_t y, std::size_t x) { return coefficients[(c * side + y) * side + x]; }
  Complex at(std::size_t c, std::size_t y, std::size_t x) const {
    return coefficients[(c * side + y) * side + x];
  }
  double energy() const;
};

/// Euclidean distance of bin (y, x) from the centered DC bin.
double bin_radius(std::size_t y, std::size_t x, std::size_t side);
/// True when the bin belongs to the low-frequency band of radius r.
bool in_low_band(std::size_t y, std::size_t x, std::size_t side, double r);
/// Smallest radius whose low band covers every bin.
double identity_radius(std::size_t side);

Spectrum fft2(std::span<const double> image, std::size_t channels, std::size_t side);
std::vector<Spectrum> fft2(const ImageBatch& batch);

std::pair<Spectrum, Spectrum> split(const Spectrum& spec, double r);

/// Real part of the inverse transform. `max_imag`, when given, receives the
/// largest absolute imaginary residue.
std::vector<double> ifft2(const Spectrum& spec, double* max_imag = nullptr);
ImageBatch ifft2(const std::vector<Spectrum>& specs, double* max_imag = nullptr);

/// Low-pass reconstruction clamped to [0, 1]. Radii at or beyond the identity
/// radius return the input unchanged.
ImageBatch low_pass(const ImageBatch& batch, double r);
std::vector<double> low_pass(std::span<const double> image, std::size_t channels, std::size_t side,
                             double r);
/// Same as low_pass but reuses a precomputed spectrum of `image`.
std::vector<double> low_pass_from(const Spectrum& spec, std::span<const double> image, double r);

/// Writes log-magnitude heatmaps (one PNG per channel).
void dump_spectrum_png(const Spectrum& spec, const std::filesystem::path& stem);

}  // namespace dad
