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
#include <span>
#include <string>
#include <vector>

namespace dad {

/// Decoded image, channel-major (C, H, W), values in [0, 1].
struct RawImage {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;
};

/// Reads grayscale, gray+alpha, RGB, RGBA or palette PNGs; alpha is dropped.
/// Throws DecodeError on malformed files.
RawImage read_png(const std::filesystem::path& path);
void write_png_gray(const std::filesystem::path& path, std::span<const double> values, std::size_t height,
                    std::size_t width);
void write_png(const std::filesystem::path& path, const RawImage& image);

/// Bilinear resize of every channel (align-corners off).
RawImage resize_bilinear(const RawImage& image, std::size_t height, std::size_t width);

/// Collapses RGB to gray (ITU-R 601 luma) or replicates gray into RGB.
RawImage convert_channels(const RawImage& image, std::size_t channels);

/// Minimal .npy container (format 1.0, little-endian, C order).
struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

void write_npy(const std::filesystem::path& path, std::span<const std::size_t> shape,
               std::span<const double> values);
void write_npy_int(const std::filesystem::path& path, std::span<const std::size_t> shape,
                   std::span<const std::int64_t> values);
void write_npy_bool(const std::filesystem::path& path, std::span<const std::size_t> shape,
                    std::span<const bool> values);
void write_npy_bool(const std::filesystem::path& path, const std::vector<bool>& values);
/// Accepts <f8, <f4, <i8, <i4, |u1 and |b1; everything is widened to double.
NpyArray read_npy(const std::filesystem::path& path);

/// Hex SHA-256 digest of a file's bytes.
std::string file_checksum(const std::filesystem::path& path);
std::string bytes_checksum(std::span<const unsigned char> bytes);

}  // namespace dad
