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

#include "dad/data.hpp"
#include "dad/model.hpp"

namespace dad::testing {

/// Small digits CNN shared by tests that need a trained model. Trained once
/// and cached in the build tree.
inline const NetworkClassifier& desk_digits_model() {
  static const NetworkClassifier model = [] {
    const std::filesystem::path cache = DAD_TEST_CACHE "/digits_cnn.bin";
    if (std::filesystem::exists(cache) && std::filesystem::exists(sidecar_path(cache)))
      return NetworkClassifier::from_checkpoint(cache);
    const auto data = load_digits_csv(DAD_DATA_DIR "/mnist_5k.csv.gz");
    const auto [train, rest] = stratified_split(data, 0.5, 7);
    auto net = make_small_cnn(1, 28, 10, 0.25);
    Rng rng(7);
    net.initialize(rng);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 7;
    train_network(net, train.images, train.labels, cfg);
    ModelMetadata meta;
    meta.architecture_name = "small-cnn";
    meta.num_classes = 10;
    meta.input_side = 28;
    meta.stochastic_capable = true;
    meta.dataset_id = "digits-test-half";
    NetworkClassifier m(std::move(net), meta);
    std::filesystem::create_directories(cache.parent_path());
    save_checkpoint(m, cache);
    return m;
  }();
  return model;
}

/// Held-out digits not used to train desk_digits_model().
inline LabeledImages desk_digits_holdout(std::size_t n) {
  const auto data = load_digits_csv(DAD_DATA_DIR "/mnist_5k.csv.gz");
  auto rest = stratified_split(data, 0.5, 7).second;
  std::vector<std::size_t> idx(std::min(n, rest.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return rest.select(idx);
}

}  // namespace dad::testing
