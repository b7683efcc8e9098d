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
#include <string>
#include <vector>

#include "dad/tensor.hpp"

namespace dad {

struct LabeledImages {
  ImageBatch images;
  std::vector<int> labels;
  std::string id;

  std::size_t size() const { return labels.size(); }
  LabeledImages select(std::span<const std::size_t> indices) const;
};

/// Provenance record written next to ingested data.
struct IngestManifest {
  std::string source;
  std::string format;
  std::size_t loaded = 0;
  std::size_t skipped = 0;
  std::vector<std::string> class_names;
  std::vector<std::pair<std::string, std::string>> checksums;  // (relative path, sha256)
};

struct IngestOptions {
  std::size_t side = 28;
  std::size_t channels = 1;
  std::size_t max_samples = 0;  // 0 = no limit
};

/// Loads a directory of class subfolders holding PNG files, a digits-style
/// CSV (optionally gzipped, 1 label + w*w pixel columns in 0..255), or an IDX
/// image/label pair. Unreadable images are skipped and counted.
LabeledImages ingest_dataset(const std::filesystem::path& source, const IngestOptions& opts,
                             IngestManifest* manifest = nullptr);

LabeledImages load_png_directory(const std::filesystem::path& dir, const IngestOptions& opts,
                                 IngestManifest* manifest = nullptr);
/// The label column is detected as whichever end column holds digits 0..9.
LabeledImages load_digits_csv(const std::filesystem::path& path, std::size_t max_rows = 0);
LabeledImages load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       std::size_t max_samples = 0);

/// Ten-class 28x28 clothing silhouettes (tops, trousers, dresses, footwear,
/// bags) drawn with randomized geometry, shading and texture.
LabeledImages make_apparel_silhouettes(std::size_t per_class, std::uint64_t seed, std::size_t side = 28);

/// Stratified deterministic split; returns (first, second) with `first_fraction`
/// of every class in the first part.
std::pair<LabeledImages, LabeledImages> stratified_split(const LabeledImages& data, double first_fraction,
                                                         std::uint64_t seed);

}  // namespace dad
