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

#include "dad/spectral.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "dad/error.hpp"
#include "dad/image_io.hpp"

namespace dad {
namespace {

// Planning is not thread-safe in FFTW; execution with new arrays is.
class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(std::size_t side, int sign) {
    std::lock_guard lock(mu_);
    auto key = std::make_pair(side, sign);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const int n = static_cast<int>(side);
    auto* buf = fftw_alloc_complex(side * side);
    fftw_plan p = fftw_plan_dft_2d(n, n, buf, buf, sign, FFTW_ESTIMATE);
    fftw_free(buf);
    plans_.emplace(key, p);
    return p;
  }

  ~PlanCache() {
    for (auto& [key, p] : plans_) fftw_destroy_plan(p);
  }

 private:
  std::mutex mu_;
  std::map<std::pair<std::size_t, int>, fftw_plan> plans_;
};

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n) : data(fftw_alloc_complex(n)) {}
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  fftw_complex* data;
};

void transform_plane(const Complex* in, Complex* out, std::size_t side, int sign) {
  const std::size_t n = side * side;
  FftwBuffer buf(n);
  auto* raw = reinterpret_cast<Complex*>(buf.data);
  std::copy(in, in + n, raw);
  fftw_execute_dft(PlanCache::instance().get(side, sign), buf.data, buf.data);
  std::copy(raw, raw + n, out);
}

}  // namespace

double Spectrum::energy() const {
  double e = 0.0;
  for (const auto& c : coefficients) e += std::norm(c);
  return e;
}

double bin_radius(std::size_t y, std::size_t x, std::size_t side) {
  const double c = static_cast<double>(side / 2);
  return std::hypot(static_cast<double>(y) - c, static_cast<double>(x) - c);
}

bool in_low_band(std::size_t y, std::size_t x, std::size_t side, double r) {
  const double c = static_cast<double>(side / 2);
  const double dy = static_cast<double>(y) - c;
  const double dx = static_cast<double>(x) - c;
  return dy * dy + dx * dx <= r * r;
}

double identity_radius(std::size_t side) {
  if (side == 0) return 0.0;
  return bin_radius(0, 0, side);
}

Spectrum fft2(std::span<const double> image, std::size_t channels, std::size_t side) {
  if (image.size() != channels * side * side)
    throw InputError("fft2: image of " + std::to_string(image.size()) + " values is not " +
                     std::to_string(channels) + "x" + std::to_string(side) + "x" + std::to_string(side));
  Spectrum spec(channels, side);
  const std::size_t plane = side * side;
  const std::size_t h = side / 2;
  std::vector<Complex> in(plane), out(plane);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) in[i] = image[c * plane + i];
    transform_plane(in.data(), out.data(), side, FFTW_FORWARD);
    // fftshift: output bin k lands at (k + w/2) mod w.
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        spec.at(c, (y + h) % side, (x + h) % side) = out[y * side + x];
  }
  return spec;
}

std::vector<Spectrum> fft2(const ImageBatch& batch) {
  std::vector<Spectrum> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    out.push_back(fft2(batch.sample(i), batch.channels(), batch.side()));
  return out;
}

std::pair<Spectrum, Spectrum> split(const Spectrum& spec, double r) {
  if (r < 0.0) throw InputError("split: negative radius");
  Spectrum low(spec.channels, spec.side), high(spec.channels, spec.side);
  for (std::size_t c = 0; c < spec.channels; ++c)
    for (std::size_t y = 0; y < spec.side; ++y)
      for (std::size_t x = 0; x < spec.side; ++x) {
        if (in_low_band(y, x, spec.side, r))
          low.at(c, y, x) = spec.at(c, y, x);
        else
          high.at(c, y, x) = spec.at(c, y, x);
      }
  return {std::move(low), std::move(high)};
}

std::vector<double> ifft2(const Spectrum& spec, double* max_imag) {
  const std::size_t side = spec.side;
  const std::size_t plane = side * side;
  const std::size_t h = side / 2;
  const double scale = plane ? 1.0 / static_cast<double>(plane) : 0.0;
  std::vector<double> image(spec.channels * plane);
  std::vector<Complex> in(plane), out(plane);
  double worst = 0.0;
  for (std::size_t c = 0; c < spec.channels; ++c) {
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) in[y * side + x] = spec.at(c, (y + h) % side, (x + h) % side);
    transform_plane(in.data(), out.data(), side, FFTW_BACKWARD);
    for (std::size_t i = 0; i < plane; ++i) {
      image[c * plane + i] = out[i].real() * scale;
      worst = std::max(worst, std::abs(out[i].imag() * scale));
    }
  }
  if (max_imag) *max_imag = worst;
  return image;
}

ImageBatch ifft2(const std::vector<Spectrum>& specs, double* max_imag) {
  if (specs.empty()) return {};
  ImageBatch out(specs.size(), specs[0].channels, specs[0].side);
  double worst = 0.0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    double m = 0.0;
    auto img = ifft2(specs[i], &m);
    worst = std::max(worst, m);
    std::copy(img.begin(), img.end(), out.sample(i).begin());
  }
  if (max_imag) *max_imag = worst;
  return out;
}

std::vector<double> low_pass_from(const Spectrum& spec, std::span<const double> image, double r) {
  if (r < 0.0) throw InputError("low_pass: negative radius");
  if (r >= identity_radius(spec.side)) return {image.begin(), image.end()};
  auto [low, high] = split(spec, r);
  auto out = ifft2(low);
  for (auto& v : out) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::vector<double> low_pass(std::span<const double> image, std::size_t channels, std::size_t side,
                             double r) {
  if (r >= identity_radius(side)) return {image.begin(), image.end()};
  return low_pass_from(fft2(image, channels, side), image, r);
}

ImageBatch low_pass(const ImageBatch& batch, double r) {
  ImageBatch out(batch.size(), batch.channels(), batch.side());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto img = low_pass(batch.sample(i), batch.channels(), batch.side(), r);
    std::copy(img.begin(), img.end(), out.sample(i).begin());
  }
  return out;
}

void dump_spectrum_png(const Spectrum& spec, const std::filesystem::path& stem) {
  const std::size_t plane = spec.side * spec.side;
  for (std::size_t c = 0; c < spec.channels; ++c) {
    std::vector<double> mag(plane);
    for (std::size_t i = 0; i < plane; ++i) mag[i] = std::log1p(std::abs(spec.coefficients[c * plane + i]));
    const double top = *std::max_element(mag.begin(), mag.end());
    if (top > 0.0)
      for (auto& v : mag) v /= top;
    auto path = stem;
    path += "_c" + std::to_string(c) + ".png";
    write_png_gray(path, mag, spec.side, spec.side);
  }
}

}  // namespace dad
