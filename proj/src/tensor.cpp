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

#include "dad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dad/error.hpp"

namespace dad {

std::size_t shape_volume(const std::vector<std::size_t>& shape) {
  std::size_t v = 1;
  for (auto d : shape) v *= d;
  return shape.empty() ? 0 : v;
}

Tensor::Tensor(std::vector<std::size_t> s, double fill)
    : shape(std::move(s)), data(shape_volume(shape), fill) {}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_volume(shape)) {
    throw InputError("tensor data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_string());
  }
}

std::size_t Tensor::row_size() const {
  if (shape.empty() || shape[0] == 0) return 0;
  return data.size() / shape[0];
}

std::span<double> Tensor::row(std::size_t i) {
  const auto rs = row_size();
  return {data.data() + i * rs, rs};
}

std::span<const double> Tensor::row(std::size_t i) const {
  const auto rs = row_size();
  return {data.data() + i * rs, rs};
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

Matrix Matrix::from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw InputError("expected a rank-2 tensor, got " + t.shape_string());
  Matrix m;
  m.rows = t.dim(0);
  m.cols = t.dim(1);
  m.data = t.data;
  return m;
}

ImageBatch::ImageBatch(std::size_t n, std::size_t channels, std::size_t side, double fill)
    : n_(n), channels_(channels), side_(side), data_(n * channels * side * side, fill) {}

ImageBatch::ImageBatch(std::size_t n, std::size_t channels, std::size_t side,
                       std::vector<double> values)
    : n_(n), channels_(channels), side_(side), data_(std::move(values)) {
  if (data_.size() != n * channels * side * side) {
    throw InputError("image data size does not match (" + std::to_string(n) + ", " +
                     std::to_string(channels) + ", " + std::to_string(side) + ", " +
                     std::to_string(side) + ")");
  }
}

ImageBatch::ImageBatch(Tensor t) {
  if (t.rank() != 4) throw InputError("image batch must be rank 4, got " + t.shape_string());
  if (t.dim(2) != t.dim(3)) throw InputError("images must be square, got " + t.shape_string());
  n_ = t.dim(0);
  channels_ = t.dim(1);
  side_ = t.dim(2);
  data_ = std::move(t.data);
}

std::span<double> ImageBatch::sample(std::size_t i) {
  return {data_.data() + i * sample_size(), sample_size()};
}

std::span<const double> ImageBatch::sample(std::size_t i) const {
  return {data_.data() + i * sample_size(), sample_size()};
}

double& ImageBatch::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
  return data_[((n * channels_ + c) * side_ + y) * side_ + x];
}

double ImageBatch::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
  return data_[((n * channels_ + c) * side_ + y) * side_ + x];
}

Tensor ImageBatch::as_tensor() const { return Tensor({n_, channels_, side_, side_}, data_); }

ImageBatch ImageBatch::select(std::span<const std::size_t> indices) const {
  ImageBatch out(indices.size(), channels_, side_);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= n_) throw InputError("sample index out of range");
    auto src = sample(indices[k]);
    std::copy(src.begin(), src.end(), out.sample(k).begin());
  }
  return out;
}

ImageBatch ImageBatch::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, n_);
  begin = std::min(begin, end);
  const auto ss = sample_size();
  return ImageBatch(end - begin, channels_, side_,
                    std::vector<double>(data_.begin() + begin * ss, data_.begin() + end * ss));
}

void ImageBatch::append(const ImageBatch& other) {
  if (other.empty()) return;
  if (n_ == 0 && data_.empty()) {
    *this = other;
    return;
  }
  if (other.channels_ != channels_ || other.side_ != side_) {
    throw InputError("cannot append images of a different shape");
  }
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  n_ += other.n_;
}

bool ImageBatch::in_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

void ImageBatch::check_unit_range() const {
  if (!in_unit_range()) throw InputError("image values must lie in [0, 1]");
}

void ImageBatch::clamp_unit() {
  for (auto& v : data_) v = std::clamp(v, 0.0, 1.0);
}

double linf_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("linf_distance: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dad
