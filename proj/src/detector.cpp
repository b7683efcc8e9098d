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

#include "dad/detector.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "dad/error.hpp"
#include "json.hpp"

namespace dad {

Matrix canonicalize_logits(const Logits& logits, std::size_t k) {
  if (k == 0) throw ConfigError("descriptor length must be at least 1");
  const Matrix p = nn::softmax(logits);
  Matrix out(p.rows, k, 0.0);
  std::vector<double> row;
  for (std::size_t i = 0; i < p.rows; ++i) {
    row.assign(p.row(i).begin(), p.row(i).end());
    std::sort(row.begin(), row.end(), std::greater<>());
    std::copy_n(row.begin(), std::min(k, row.size()), out.row(i).begin());
  }
  return out;
}

// ---------------------------------------------------------------- DetectionHead

DetectionHead::DetectionHead(const HeadConfig& cfg) : input_dim_(cfg.input_dim) {
  if (cfg.input_dim == 0 || cfg.hidden == 0) throw ConfigError("detection head sizes must be positive");
  net_.add(std::make_unique<nn::Linear>(cfg.input_dim, cfg.hidden))
      .add(std::make_unique<nn::ReLU>())
      .add(std::make_unique<nn::Dropout>(cfg.dropout))
      .add(std::make_unique<nn::Linear>(cfg.hidden, cfg.hidden))
      .add(std::make_unique<nn::ReLU>())
      .add(std::make_unique<nn::Dropout>(cfg.dropout))
      .add(std::make_unique<nn::BatchNorm1d>(cfg.hidden))
      .add(std::make_unique<nn::WeightNormLinear>(cfg.hidden, cfg.hidden))
      .add(std::make_unique<nn::Linear>(cfg.hidden, 2));
}

DetectionHead::DetectionHead(nn::Sequential net, std::size_t input_dim) : net_(std::move(net)), input_dim_(input_dim) {
  if (net_.size() != kClassifierLayer + 1) throw DecodeError("unexpected detection head layout");
}

std::size_t DetectionHead::feature_dim() const {
  const auto* wn = dynamic_cast<const nn::WeightNormLinear*>(&net_.layer(kFeatureLayer));
  return wn ? wn->out_features() : 0;
}

Matrix DetectionHead::logits(const Matrix& descriptors) const {
  if (descriptors.cols != input_dim_) throw InputError("descriptor length does not match the detection head");
  return Matrix::from_tensor(net_.forward(descriptors.to_tensor(), nn::kInference));
}

Matrix DetectionHead::probabilities(const Matrix& descriptors) const { return nn::softmax(logits(descriptors)); }

Matrix DetectionHead::features(const Matrix& descriptors, const nn::Mode& mode) const {
  if (descriptors.cols != input_dim_) throw InputError("descriptor length does not match the detection head");
  std::vector<Rng> none;
  return Matrix::from_tensor(net_.forward_range(descriptors.to_tensor(), 0, kFeatureLayer + 1, mode, none));
}

std::uint64_t DetectionHead::classifier_checksum() const {
  nn::Sequential only;
  only.add(net_.layer(kClassifierLayer).clone());
  return only.checksum();
}

std::string DetectionHead::architecture_id() const { return architecture_hash(net_.descriptor()); }

void DetectionHead::save(const std::filesystem::path& path, const std::string& source_dataset_id) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    net_.save(os);
  }
  nlohmann::json j;
  j["descriptor_length"] = input_dim_;
  j["architecture_id"] = architecture_id();
  j["source_dataset_id"] = source_dataset_id;
  std::ofstream js(sidecar_path(path));
  if (!js) throw IoError("cannot write head metadata");
  js << j.dump(2) << '\n';
}

DetectionHead DetectionHead::load(const std::filesystem::path& path, std::string* source_dataset_id) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open head checkpoint " + path.string());
  nn::Sequential net = nn::Sequential::load(is);
  std::ifstream js(sidecar_path(path));
  if (!js) throw DecodeError("missing head metadata " + sidecar_path(path).string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw DecodeError(std::string("corrupt head metadata: ") + e.what());
  }
  const auto id = j.value("architecture_id", std::string());
  if (id != architecture_hash(net.descriptor())) throw DecodeError("head architecture does not match its metadata");
  if (source_dataset_id) *source_dataset_id = j.value("source_dataset_id", std::string());
  return DetectionHead(std::move(net), j.value("descriptor_length", std::size_t{0}));
}

// ---------------------------------------------------------------- datasets

DetectorDataset descriptor_pairs(const Classifier& model, const AdversarialSet& set, std::size_t k,
                                 bool only_fooled) {
  const Logits zc = model.forward(set.clean);
  const Logits za = model.forward(set.adversarial);
  const Matrix dc = canonicalize_logits(zc, k);
  const Matrix da = canonicalize_logits(za, k);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (!only_fooled || argmax(zc.row(i)) != argmax(za.row(i))) keep.push_back(i);
  DetectorDataset out;
  out.descriptors = Matrix(2 * keep.size(), k);
  out.labels.resize(2 * keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    std::copy_n(dc.row(keep[j]).begin(), k, out.descriptors.row(2 * j).begin());
    std::copy_n(da.row(keep[j]).begin(), k, out.descriptors.row(2 * j + 1).begin());
    out.labels[2 * j] = kCleanLabel;
    out.labels[2 * j + 1] = kAdversarialLabel;
  }
  return out;
}

DetectorDataset generate_detector_dataset(const Classifier& model, const ImageBatch& images,
                                          const AttackConfig& attack, std::size_t k, bool only_fooled,
                                          AdversarialSet* adversarial) {
  auto set = make_adversarial_set(model, images, attack);
  auto out = descriptor_pairs(model, set, k, only_fooled);
  if (adversarial) *adversarial = std::move(set);
  return out;
}

// ---------------------------------------------------------------- training

namespace {

// Batches of at least two rows, since batch normalization needs a spread.
std::vector<std::pair<std::size_t, std::size_t>> batch_bounds(std::size_t n, std::size_t bs) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  bs = std::max<std::size_t>(bs, 2);
  for (std::size_t b = 0; b < n; b += bs) out.emplace_back(b, std::min(n, b + bs));
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    out[out.size() - 2].second = out.back().second;
    out.pop_back();
  }
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(m.row(idx[i]).begin(), m.cols, out.row(i).begin());
  return out;
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

}  // namespace

DetectionHead train_source_head(const Matrix& descriptors, std::span<const int> labels, const HeadTrainConfig& cfg,
                                const HeadConfig& head_cfg, HeadTrainLog* log) {
  if (labels.size() != descriptors.rows) throw InputError("label count does not match descriptor rows");
  if (descriptors.rows < 4) throw InputError("need at least four descriptor rows to train a head");
  HeadConfig hc = head_cfg;
  hc.input_dim = descriptors.cols;
  DetectionHead head(hc);
  Rng rng(cfg.seed);
  head.initialize(rng);

  auto order = permutation(descriptors.rows, rng);
  const auto n_val = static_cast<std::size_t>(cfg.validation_fraction * static_cast<double>(descriptors.rows));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (train.size() < 2) throw InputError("too few rows left for training after the validation split");

  nn::Sgd opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  auto& net = head.network();
  const auto bounds = batch_bounds(train.size(), cfg.batch_size);
  const std::size_t total = bounds.size() * cfg.epochs;
  std::size_t step = 0;
  HeadTrainLog local;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(train), rng);
    double loss_sum = 0.0;
    for (auto [b, e] : bounds) {
      std::span<const std::size_t> idx(train.data() + b, e - b);
      const Matrix x = gather_rows(descriptors, idx);
      std::vector<int> y(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) y[k] = labels[idx[k]];
      opt.set_learning_rate(cosine_lr(cfg.learning_rate, step, total));
      std::vector<nn::Cache> caches;
      std::vector<Rng> stream{Rng(derive_seed(cfg.seed, 7919 + step))};
      const Matrix z = Matrix::from_tensor(net.forward(x.to_tensor(), nn::kTraining, stream, &caches));
      const auto lg = nn::cross_entropy(z, y);
      if (!std::isfinite(lg.loss)) throw TrainingError("detection head training diverged");
      auto grads = net.zero_gradients();
      net.backward(lg.grad.to_tensor(), caches, grads);
      net.update_statistics(caches);
      opt.step(net, grads);
      loss_sum += lg.loss * static_cast<double>(idx.size());
      ++step;
    }
    local.epoch_loss.push_back(loss_sum / static_cast<double>(train.size()));
  }
  if (!val.empty()) {
    const Matrix p = head.probabilities(gather_rows(descriptors, val));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < val.size(); ++i) hits += static_cast<int>(argmax(p.row(i))) == labels[val[i]];
    local.validation_accuracy = static_cast<double>(hits) / static_cast<double>(val.size());
  }
  spdlog::info("source head: held-out detection accuracy {:.4f}", local.validation_accuracy);
  if (log) *log = std::move(local);
  return head;
}

// ---------------------------------------------------------------- adaptation losses

namespace {

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }
double safe_log(double p) { return p > 0.0 ? std::log(p) : 0.0; }

}  // namespace

double entropy_loss(const Matrix& probs) {
  if (probs.rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows; ++i)
    for (double p : probs.row(i)) total -= plogp(p);
  return total / static_cast<double>(probs.rows);
}

double diversity_loss(const Matrix& probs) {
  if (probs.rows == 0) return 0.0;
  std::vector<double> mean(probs.cols, 0.0);
  for (std::size_t i = 0; i < probs.rows; ++i)
    for (std::size_t c = 0; c < probs.cols; ++c) mean[c] += probs(i, c);
  double h = 0.0;
  for (double m : mean) h -= plogp(m / static_cast<double>(probs.rows));
  return h;
}

nn::LossAndGrad adaptation_objective(const Matrix& logits, std::span<const int> pseudo_labels, double delta,
                                     double lambda_pl) {
  const std::size_t n = logits.rows, c = logits.cols;
  const Matrix p = nn::softmax(logits);
  const double inv_n = 1.0 / static_cast<double>(n);
  nn::LossAndGrad out;
  out.grad = Matrix(n, c, 0.0);

  const double ent = entropy_loss(p);
  const double div = diversity_loss(p);
  std::vector<double> mean(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) mean[j] += p(i, j) * inv_n;
  std::vector<double> g(c);
  for (std::size_t j = 0; j < c; ++j) g[j] = -(safe_log(mean[j]) + 1.0);

  double pseudo = 0.0;
  if (lambda_pl != 0.0) {
    const auto ce = nn::cross_entropy(logits, pseudo_labels);
    pseudo = ce.loss;
    for (std::size_t k = 0; k < out.grad.data.size(); ++k) out.grad.data[k] += lambda_pl * ce.grad.data[k];
  }
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0.0, gp = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      h -= plogp(p(i, j));
      gp += g[j] * p(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) {
      const double d_ent = -p(i, j) * (safe_log(p(i, j)) + h) * inv_n;
      const double d_div = p(i, j) * (g[j] - gp) * inv_n;
      out.grad(i, j) += d_ent - delta * d_div;
    }
  }
  out.loss = ent - delta * div + lambda_pl * pseudo;
  return out;
}

std::vector<int> assign_pseudo_labels(const Matrix& features, const Matrix& probs, std::size_t rounds) {
  if (rounds == 0) throw ConfigError("pseudo-label rounds must be at least 1");
  if (features.rows != probs.rows) throw InputError("feature and probability row counts differ");
  const std::size_t n = features.rows, f = features.cols, c = probs.cols;
  Matrix centroids(c, f, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      wsum += probs(i, k);
      for (std::size_t d = 0; d < f; ++d) centroids(k, d) += probs(i, k) * features(i, d);
    }
    if (wsum > 0.0)
      for (std::size_t d = 0; d < f; ++d) centroids(k, d) /= wsum;
  }

  auto norm = [](std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  std::vector<double> fnorm(n);
  for (std::size_t i = 0; i < n; ++i) fnorm[i] = norm(features.row(i));

  std::vector<int> labels(n, 0);
  auto assign = [&] {
    std::vector<double> cnorm(c);
    for (std::size_t k = 0; k < c; ++k) cnorm[k] = norm(centroids.row(k));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> sim(c, 0.0);
      for (std::size_t k = 0; k < c; ++k) {
        if (fnorm[i] == 0.0 || cnorm[k] == 0.0) continue;
        double dot = 0.0;
        for (std::size_t d = 0; d < f; ++d) dot += features(i, d) * centroids(k, d);
        sim[k] = dot / (fnorm[i] * cnorm[k]);
      }
      labels[i] = static_cast<int>(argmax(sim));
    }
  };
  assign();
  for (std::size_t r = 1; r < rounds; ++r) {
    Matrix next(c, f, 0.0);
    std::vector<std::size_t> count(c, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(labels[i]);
      ++count[k];
      for (std::size_t d = 0; d < f; ++d) next(k, d) += features(i, d);
    }
    for (std::size_t k = 0; k < c; ++k) {
      if (count[k] == 0) continue;  // empty cluster keeps its previous centroid
      for (std::size_t d = 0; d < f; ++d) centroids(k, d) = next(k, d) / static_cast<double>(count[k]);
    }
    assign();
  }
  return labels;
}

void AdaptationConfig::validate() const {
  if (!(delta >= 0.0)) throw ConfigError("delta must be non-negative");
  if (!(lambda_pl >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("adaptation learning rate must be positive");
  if (pseudo_rounds == 0) throw ConfigError("pseudo-label rounds must be at least 1");
}

namespace {

constexpr nn::Mode kBatchStatsOnly{true, false};

std::vector<bool> frozen_classifier(const DetectionHead& head) {
  std::vector<bool> frozen(head.network().size(), false);
  frozen[DetectionHead::kClassifierLayer] = true;
  return frozen;
}

}  // namespace

std::vector<int> refresh_pseudo_labels(const DetectionHead& head, const Matrix& descriptors, std::size_t rounds) {
  return assign_pseudo_labels(head.features(descriptors), head.probabilities(descriptors), rounds);
}

double evaluate_adaptation_loss(const DetectionHead& head, const Matrix& descriptors,
                                std::span<const int> pseudo_labels, const AdaptationConfig& cfg) {
  std::vector<Rng> none;
  const Matrix z = Matrix::from_tensor(head.network().forward(descriptors.to_tensor(), kBatchStatsOnly, none));
  return adaptation_objective(z, pseudo_labels, cfg.delta, cfg.lambda_pl).loss;
}

DetectionHead adapt_head(const DetectionHead& source, const Matrix& descriptors, const AdaptationConfig& cfg,
                         AdaptationLog* log) {
  cfg.validate();
  if (descriptors.rows < cfg.min_mix_size)
    throw AdaptationError("adaptation mix has " + std::to_string(descriptors.rows) + " samples, fewer than the minimum " +
                          std::to_string(cfg.min_mix_size));
  if (descriptors.cols != source.input_dim()) throw InputError("descriptor length does not match the source head");
  DetectionHead head = source;
  auto& net = head.network();
  const auto frozen = frozen_classifier(head);
  nn::Sgd opt(cfg.learning_rate, cfg.momentum, cfg.weight_decay);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(descriptors.rows);
  std::iota(order.begin(), order.end(), 0);
  const auto bounds = batch_bounds(order.size(), cfg.batch_size);
  const std::size_t total = bounds.size() * cfg.epochs;

  AdaptationLog local;
  auto pseudo = refresh_pseudo_labels(head, descriptors, cfg.pseudo_rounds);
  local.initial_loss = evaluate_adaptation_loss(head, descriptors, pseudo, cfg);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (epoch > 0) {
      auto next = refresh_pseudo_labels(head, descriptors, cfg.pseudo_rounds);
      std::size_t changed = 0;
      for (std::size_t i = 0; i < next.size(); ++i) changed += next[i] != pseudo[i];
      local.pseudo_label_changes.push_back(changed);
      pseudo = std::move(next);
    }
    shuffle(std::span<std::size_t>(order), rng);
    for (auto [b, e] : bounds) {
      std::span<const std::size_t> idx(order.data() + b, e - b);
      const Matrix x = gather_rows(descriptors, idx);
      std::vector<int> y(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) y[k] = pseudo[idx[k]];
      opt.set_learning_rate(cosine_lr(cfg.learning_rate, step, total));
      std::vector<nn::Cache> caches;
      std::vector<Rng> stream{Rng(derive_seed(cfg.seed, 104729 + step))};
      const Matrix z = Matrix::from_tensor(net.forward(x.to_tensor(), nn::kTraining, stream, &caches));
      const auto obj = adaptation_objective(z, y, cfg.delta, cfg.lambda_pl);
      if (!std::isfinite(obj.loss)) throw TrainingError("detector adaptation diverged");
      auto grads = net.zero_gradients();
      net.backward(obj.grad.to_tensor(), caches, grads);
      net.update_statistics(caches);
      opt.step(net, grads, frozen);
      ++step;
    }
    local.epoch_loss.push_back(evaluate_adaptation_loss(head, descriptors, pseudo, cfg));
    spdlog::debug("adaptation epoch {}: objective {:.5f}", epoch, local.epoch_loss.back());
  }
  if (log) *log = std::move(local);
  return head;
}

// ---------------------------------------------------------------- TargetDetector

TargetDetector::TargetDetector(std::shared_ptr<const Classifier> backbone, DetectionHead head)
    : backbone_(std::move(backbone)), head_(std::move(head)) {
  if (!backbone_) throw ConfigError("target detector needs a backbone");
}

Matrix TargetDetector::descriptors(const ImageBatch& batch) const {
  return canonicalize_logits(backbone_->forward(batch), head_.input_dim());
}

Matrix TargetDetector::detect(const ImageBatch& batch) const {
  if (batch.empty()) return Matrix(0, 2);
  return head_.probabilities(descriptors(batch));
}

std::vector<double> TargetDetector::clean_probability(const ImageBatch& batch) const {
  const Matrix p = detect(batch);
  std::vector<double> out(p.rows);
  for (std::size_t i = 0; i < p.rows; ++i) out[i] = p(i, kCleanLabel);
  return out;
}

TargetDetector adapt_target_detector(std::shared_ptr<const Classifier> target, const DetectionHead& source,
                                     const ImageBatch& unlabeled_mix, const AdaptationConfig& cfg,
                                     AdaptationLog* log) {
  if (!target) throw ConfigError("target model is required");
  if (target->stochastic_mode()) throw StateError("target model must be in deterministic mode for adaptation");
  const Matrix desc = canonicalize_logits(target->forward(unlabeled_mix), source.input_dim());
  return TargetDetector(target, adapt_head(source, desc, cfg, log));
}

NetworkClassifier train_arbitrary_classifier(const LabeledImages& data, const TrainConfig& cfg, TrainLog* log) {
  if (data.size() == 0) throw InputError("arbitrary dataset is empty");
  const int classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  auto net = make_small_cnn(data.images.channels(), data.images.side(), static_cast<std::size_t>(classes), 0.0);
  Rng rng(cfg.seed);
  net.initialize(rng);
  auto l = train_network(net, data.images, data.labels, cfg, [](std::size_t epoch, double loss) {
    spdlog::info("arbitrary classifier epoch {}: loss {:.4f}", epoch, loss);
  });
  spdlog::info("arbitrary classifier: validation accuracy {:.4f}", l.validation_accuracy);
  ModelMetadata meta;
  meta.architecture_name = "small-cnn";
  meta.num_classes = static_cast<std::size_t>(classes);
  meta.input_side = data.images.side();
  meta.input_channels = data.images.channels();
  meta.dataset_id = data.id;
  if (log) *log = std::move(l);
  return NetworkClassifier(std::move(net), meta);
}

}  // namespace dad
