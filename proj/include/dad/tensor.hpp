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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dad {

/// Dense row-major n-d array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);
  Tensor(std::vector<std::size_t> s, std::vector<double> values);

  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t size() const { return data.size(); }
  /// Elements per leading-axis entry.
  std::size_t row_size() const;

  std::span<double> row(std::size_t i);
  std::span<const double> row(std::size_t i) const;

  std::string shape_string() const;
};

std::size_t shape_volume(const std::vector<std::size_t>& shape);

/// Row-major 2-d matrix (logits, probabilities, descriptors, features).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  static Matrix from_tensor(const Tensor& t);
  Tensor to_tensor() const { return Tensor({rows, cols}, data); }
  bool operator==(const Matrix&) const = default;
};

using Logits = Matrix;

/// Batch of square images, shape (N, C, w, w), nominally in [0, 1].
///
/// Construction only enforces the shape contract; intermediate results such as
/// inverse transforms may leave [0, 1], so range is checked separately.
class ImageBatch {
 public:
  ImageBatch() = default;
  ImageBatch(std::size_t n, std::size_t channels, std::size_t side, double fill = 0.0);
  ImageBatch(std::size_t n, std::size_t channels, std::size_t side, std::vector<double> values);
  /// Accepts (N, C, H, W); throws InputError unless H == W.
  explicit ImageBatch(Tensor t);

  std::size_t size() const { return n_; }
  bool empty() const { return n_ == 0; }
  std::size_t channels() const { return channels_; }
  std::size_t side() const { return side_; }
  std::size_t sample_size() const { return channels_ * side_ * side_; }

  std::span<double> sample(std::size_t i);
  std::span<const double> sample(std::size_t i) const;
  double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x);
  double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Tensor as_tensor() const;
  ImageBatch select(std::span<const std::size_t> indices) const;
  ImageBatch slice(std::size_t begin, std::size_t end) const;
  void append(const ImageBatch& other);

  bool in_unit_range() const;
  /// Throws InputError if any value leaves [0, 1].
  void check_unit_range() const;
  void clamp_unit();

  bool operator==(const ImageBatch&) const = default;

 private:
  std::size_t n_ = 0;
  std::size_t channels_ = 0;
  std::size_t side_ = 0;
  std::vector<double> data_;
};

/// Largest per-sample max-abs difference.
double linf_distance(std::span<const double> a, std::span<const double> b);

}  // namespace dad
