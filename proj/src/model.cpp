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

#include "dad/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dad/error.hpp"
#include "json.hpp"

namespace dad {

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// ---------------------------------------------------------------- Classifier

void Classifier::check_batch(const ImageBatch& batch) const {
  check_ready();
  if (batch.empty()) return;
  if (batch.side() != input_side()) {
    throw InputError("batch side " + std::to_string(batch.side()) + " does not match model input side " +
                     std::to_string(input_side()));
  }
  if (batch.channels() != input_channels()) {
    throw InputError("batch has " + std::to_string(batch.channels()) + " channels, model expects " +
                     std::to_string(input_channels()));
  }
}

Logits Classifier::forward(const ImageBatch& batch, std::span<Rng> rngs) const {
  std::shared_lock lock(mode_mutex_);
  check_batch(batch);
  if (batch.empty()) return Logits(0, num_classes());
  ++calls_;
  if (stochastic_ && rngs.empty()) {
    std::lock_guard guard(fallback_mutex_);
    return do_forward(batch, true, std::span<Rng>(&fallback_, 1));
  }
  if (!rngs.empty() && rngs.size() != 1 && rngs.size() != batch.size())
    throw InputError("expected one random stream or one per sample");
  return do_forward(batch, stochastic_, rngs);
}

std::vector<std::vector<int>> Classifier::stochastic_labels(const ImageBatch& batch, std::size_t trials,
                                                            std::span<Rng> rngs) const {
  std::shared_lock lock(mode_mutex_);
  check_batch(batch);
  if (!stochastic_) throw StateError("stochastic_labels requires stochastic mode");
  if (rngs.size() != 1 && rngs.size() != batch.size())
    throw InputError("expected one random stream or one per sample");
  if (batch.empty() || trials == 0) return std::vector<std::vector<int>>(trials);
  calls_ += trials;
  return do_stochastic_labels(batch, trials, rngs);
}

std::vector<std::vector<int>> Classifier::do_stochastic_labels(const ImageBatch& batch, std::size_t trials,
                                                               std::span<Rng> rngs) const {
  std::vector<std::vector<int>> out(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    const Logits z = do_forward(batch, true, rngs);
    out[t].resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) out[t][i] = static_cast<int>(argmax(z.row(i)));
  }
  return out;
}

ImageBatch Classifier::loss_input_gradient(const ImageBatch& batch, std::span<const int> labels) const {
  std::shared_lock lock(mode_mutex_);
  check_batch(batch);
  if (labels.size() != batch.size()) throw InputError("label count does not match batch size");
  ++calls_;
  return do_input_gradient(batch, labels);
}

ImageBatch Classifier::do_input_gradient(const ImageBatch&, std::span<const int>) const {
  throw CapabilityError("this classifier does not expose input gradients");
}

void Classifier::set_stochastic_mode(bool enabled) {
  std::unique_lock lock(mode_mutex_);
  if (enabled && !stochastic_capable()) {
    throw CapabilityError("model has no dropout layer; inject dropout to enable stochastic inference");
  }
  stochastic_ = enabled;
}

bool Classifier::stochastic_mode() const {
  std::shared_lock lock(mode_mutex_);
  return stochastic_;
}

void Classifier::seed_internal_stream(std::uint64_t seed) {
  std::lock_guard guard(fallback_mutex_);
  fallback_.seed(seed);
}

std::vector<int> predict_labels(const Classifier& model, const ImageBatch& batch) {
  const Logits z = model.forward(batch);
  std::vector<int> out(z.rows);
  for (std::size_t i = 0; i < z.rows; ++i) out[i] = static_cast<int>(argmax(z.row(i)));
  return out;
}

Matrix predict_proba(const Classifier& model, const ImageBatch& batch) {
  return nn::softmax(model.forward(batch));
}

// ---------------------------------------------------------------- NetworkClassifier

std::string architecture_hash(const std::string& descriptor) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : descriptor) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

NetworkClassifier::NetworkClassifier(nn::Sequential net, ModelMetadata meta)
    : net_(std::move(net)), meta_(std::move(meta)), loaded_(true) {
  meta_.architecture_id = architecture_hash(net_.descriptor());
  if (meta_.num_classes == 0) throw ConfigError("num_classes must be positive");
}

NetworkClassifier::NetworkClassifier(const NetworkClassifier& other)
    : Classifier(other), net_(other.net_), meta_(other.meta_), loaded_(other.loaded_) {}

NetworkClassifier& NetworkClassifier::operator=(const NetworkClassifier& other) {
  if (this != &other) {
    Classifier::operator=(other);
    net_ = other.net_;
    meta_ = other.meta_;
    loaded_ = other.loaded_;
  }
  return *this;
}

NetworkClassifier NetworkClassifier::from_checkpoint(const std::filesystem::path& path) {
  NetworkClassifier m;
  load_checkpoint(m, path);
  return m;
}

void NetworkClassifier::check_ready() const {
  if (!loaded_) throw StateError("classifier has no loaded network");
}

void NetworkClassifier::inject_dropout(double rate) {
  check_ready();
  std::size_t last_linear = net_.size();
  for (std::size_t i = net_.size(); i-- > 0;) {
    const auto d = net_.layer(i).descriptor();
    if (d.rfind("linear", 0) == 0 || d.rfind("wnlinear", 0) == 0) {
      last_linear = i;
      break;
    }
  }
  if (last_linear == net_.size()) throw CapabilityError("cannot inject dropout: no linear layer found");
  net_.insert(last_linear, std::make_unique<nn::Dropout>(rate));
  meta_.injected_dropout_rate = rate;
  meta_.injected_dropout_position = last_linear;
  meta_.stochastic_capable = true;
  meta_.architecture_id = architecture_hash(net_.descriptor());
}

namespace {

// Bounds the im2col scratch of large batches. Rows are independent in every
// mode used here, so chunking does not change results.
constexpr std::size_t kForwardChunk = 256;

std::span<Rng> chunk_streams(std::span<Rng> rngs, std::size_t begin, std::size_t end) {
  if (rngs.size() <= 1) return rngs;
  return rngs.subspan(begin, end - begin);
}

}  // namespace

Logits NetworkClassifier::do_forward(const ImageBatch& batch, bool stochastic, std::span<Rng> rngs) const {
  const nn::Mode mode{false, stochastic};
  if (batch.size() <= kForwardChunk) return Matrix::from_tensor(net_.forward(batch.as_tensor(), mode, rngs));
  Logits out(batch.size(), meta_.num_classes);
  for (std::size_t b = 0; b < batch.size(); b += kForwardChunk) {
    const std::size_t e = std::min(batch.size(), b + kForwardChunk);
    const Tensor z = net_.forward(batch.slice(b, e).as_tensor(), mode, chunk_streams(rngs, b, e));
    std::copy(z.data.begin(), z.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(b * out.cols));
  }
  return out;
}

std::vector<std::vector<int>> NetworkClassifier::do_stochastic_labels(const ImageBatch& batch,
                                                                      std::size_t trials,
                                                                      std::span<Rng> rngs) const {
  if (batch.size() > kForwardChunk && rngs.size() == batch.size()) {
    std::vector<std::vector<int>> out(trials);
    for (std::size_t b = 0; b < batch.size(); b += kForwardChunk) {
      const std::size_t e = std::min(batch.size(), b + kForwardChunk);
      auto part = do_stochastic_labels(batch.slice(b, e), trials, rngs.subspan(b, e - b));
      for (std::size_t t = 0; t < trials; ++t) out[t].insert(out[t].end(), part[t].begin(), part[t].end());
    }
    return out;
  }
  // Everything before the first dropout layer is deterministic, so it runs once.
  const std::size_t split = net_.first_dropout();
  const Tensor trunk = net_.forward_range(batch.as_tensor(), 0, split, nn::kInference);
  const nn::Mode mode{false, true};
  std::vector<std::vector<int>> out(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    const Tensor z = net_.forward_range(trunk, split, net_.size(), mode, rngs);
    out[t].resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) out[t][i] = static_cast<int>(argmax(z.row(i)));
  }
  return out;
}

ImageBatch NetworkClassifier::do_input_gradient(const ImageBatch& batch, std::span<const int> labels) const {
  if (batch.size() > kForwardChunk) {
    ImageBatch out(0, batch.channels(), batch.side());
    for (std::size_t b = 0; b < batch.size(); b += kForwardChunk) {
      const std::size_t e = std::min(batch.size(), b + kForwardChunk);
      out.append(do_input_gradient(batch.slice(b, e), labels.subspan(b, e - b)));
    }
    return out;
  }
  std::vector<nn::Cache> caches;
  const Tensor z = net_.forward(batch.as_tensor(), nn::kInference, {}, &caches);
  auto lg = nn::cross_entropy(Matrix::from_tensor(z), labels);
  // Undo the batch mean so each sample receives the gradient of its own loss.
  for (auto& g : lg.grad.data) g *= static_cast<double>(batch.size());
  nn::Gradients scratch = net_.zero_gradients();
  Tensor gin = net_.backward(lg.grad.to_tensor(), caches, scratch);
  return ImageBatch(std::move(gin));
}

// ---------------------------------------------------------------- checkpoints

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

void save_checkpoint(const NetworkClassifier& model, const std::filesystem::path& path) {
  if (!model.loaded()) throw StateError("cannot save an unloaded classifier");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    model.network().save(os);
  }
  const auto& m = model.metadata();
  nlohmann::json j;
  j["architecture_name"] = m.architecture_name;
  j["architecture_id"] = m.architecture_id;
  j["num_classes"] = m.num_classes;
  j["input_side"] = m.input_side;
  j["input_channels"] = m.input_channels;
  j["stochastic_capable"] = m.stochastic_capable;
  j["dataset_id"] = m.dataset_id;
  nlohmann::json inj = nullptr;
  if (m.injected_dropout_rate) {
    inj = {{"rate", *m.injected_dropout_rate},
           {"position", m.injected_dropout_position.value_or(0)}};
  }
  j["injected_dropout"] = inj;
  std::ofstream js(sidecar_path(path));
  if (!js) throw IoError("cannot write checkpoint metadata");
  js << j.dump(2) << '\n';
}

void load_checkpoint(NetworkClassifier& model, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  nn::Sequential net = nn::Sequential::load(is);

  std::ifstream js(sidecar_path(path));
  if (!js) throw DecodeError("missing checkpoint metadata " + sidecar_path(path).string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  ModelMetadata meta;
  try {
    meta.architecture_name = j.value("architecture_name", std::string());
    meta.architecture_id = j.at("architecture_id").get<std::string>();
    meta.num_classes = j.at("num_classes").get<std::size_t>();
    meta.input_side = j.at("input_side").get<std::size_t>();
    meta.input_channels = j.value("input_channels", std::size_t{1});
    // Older files predate the flag; they are treated as deterministic-only.
    meta.stochastic_capable = j.value("stochastic_capable", false);
    meta.dataset_id = j.value("dataset_id", std::string());
    if (j.contains("injected_dropout") && j["injected_dropout"].is_object()) {
      meta.injected_dropout_rate = j["injected_dropout"].at("rate").get<double>();
      meta.injected_dropout_position = j["injected_dropout"].value("position", std::size_t{0});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("invalid checkpoint metadata: ") + e.what());
  }
  const auto actual = architecture_hash(net.descriptor());
  if (meta.architecture_id != actual) {
    throw DecodeError("checkpoint architecture " + actual + " does not match metadata " + meta.architecture_id);
  }
  if (model.loaded() && model.metadata().architecture_id != actual) {
    throw DecodeError("checkpoint architecture does not match the target model");
  }
  const bool capable = meta.stochastic_capable;
  model = NetworkClassifier(std::move(net), std::move(meta));
  model.mutable_metadata().stochastic_capable = capable;
}

// ---------------------------------------------------------------- training

nn::Sequential make_small_cnn(std::size_t channels, std::size_t side, std::size_t classes, double dropout_rate) {
  if (side < 4) throw ConfigError("image side must be at least 4");
  const std::size_t pooled = side / 2 / 2;
  nn::Sequential net;
  net.add(std::make_unique<nn::Conv2d>(channels, 8, 5, 2))
      .add(std::make_unique<nn::ReLU>())
      .add(std::make_unique<nn::MaxPool2d>(2))
      .add(std::make_unique<nn::Conv2d>(8, 16, 5, 2))
      .add(std::make_unique<nn::ReLU>())
      .add(std::make_unique<nn::MaxPool2d>(2))
      .add(std::make_unique<nn::Flatten>())
      .add(std::make_unique<nn::Linear>(16 * pooled * pooled, 64))
      .add(std::make_unique<nn::ReLU>());
  if (dropout_rate > 0.0) net.add(std::make_unique<nn::Dropout>(dropout_rate));
  net.add(std::make_unique<nn::Linear>(64, classes));
  return net;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw InputError("accuracy: length mismatch");
  if (predicted.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

TrainLog train_network(nn::Sequential& net, const ImageBatch& images, std::span<const int> labels,
                       const TrainConfig& cfg, const std::function<void(std::size_t, double)>& on_epoch) {
  if (labels.size() != images.size()) throw InputError("label count does not match image count");
  if (images.empty()) throw InputError("cannot train on an empty dataset");
  Rng rng(cfg.seed);
  auto order = permutation(images.size(), rng);
  const auto n_val = static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(images.size()));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  nn::Sgd opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  TrainLog log;
  const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);
  const std::size_t steps_per_epoch = (train.size() + bs - 1) / bs;
  const double total_steps = static_cast<double>(steps_per_epoch * std::max<std::size_t>(cfg.epochs, 1));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(train), rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t b = 0; b < train.size(); b += bs) {
      std::span<const std::size_t> idx(train.data() + b, std::min(bs, train.size() - b));
      const ImageBatch x = images.select(idx);
      std::vector<int> y(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) y[k] = labels[idx[k]];
      if (cfg.cosine_schedule) {
        opt.set_learning_rate(0.5 * cfg.learning_rate *
                              (1.0 + std::cos(3.141592653589793 * static_cast<double>(step) / total_steps)));
      }
      std::vector<nn::Cache> caches;
      std::vector<Rng> stream{Rng(derive_seed(cfg.seed, 1000003 + step))};
      const Tensor z = net.forward(x.as_tensor(), nn::kTraining, stream, &caches);
      const Matrix logits = Matrix::from_tensor(z);
      const auto lg = nn::cross_entropy(logits, y);
      if (!std::isfinite(lg.loss)) throw TrainingError("training diverged (non-finite loss)");
      nn::Gradients grads = net.zero_gradients();
      net.backward(lg.grad.to_tensor(), caches, grads);
      net.update_statistics(caches);
      opt.step(net, grads);
      loss_sum += lg.loss * static_cast<double>(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) hits += static_cast<int>(argmax(logits.row(k))) == y[k];
      ++step;
    }
    const double mean_loss = loss_sum / static_cast<double>(train.size());
    log.epoch_loss.push_back(mean_loss);
    log.epoch_train_accuracy.push_back(static_cast<double>(hits) / static_cast<double>(train.size()));
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  if (!val.empty()) {
    const ImageBatch xv = images.select(val);
    const Tensor z = net.forward(xv.as_tensor(), nn::kInference);
    std::size_t hits = 0;
    for (std::size_t k = 0; k < val.size(); ++k)
      hits += static_cast<int>(argmax(z.row(k))) == labels[val[k]];
    log.validation_accuracy = static_cast<double>(hits) / static_cast<double>(val.size());
    if (log.validation_accuracy < cfg.min_validation_accuracy) {
      throw TrainingError("validation accuracy " + std::to_string(log.validation_accuracy) +
                          " is below the configured floor");
    }
  }
  return log;
}

}  // namespace dad
