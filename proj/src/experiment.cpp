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

#include "dad/experiment.hpp"

#include <algorithm>
#include <cstdlib>

#include <spdlog/spdlog.h>

#include "dad/error.hpp"
#include "dad/image_io.hpp"

namespace dad {

namespace {

bool usable(const std::filesystem::path& p) { return std::filesystem::exists(p); }

}  // namespace

std::filesystem::path bundled_data_dir() {
  if (const char* env = std::getenv("DAD_DATA_DIR"); env && *env) return env;
  return DAD_BUNDLED_DATA_DIR;
}

ImageBatch load_image_input(const std::filesystem::path& source, std::size_t channels, std::size_t side) {
  namespace fs = std::filesystem;
  if (!fs::exists(source)) throw InputError(source.string() + ": no such input");
  ImageBatch batch;
  if (fs::is_regular_file(source) && source.extension() == ".npy") {
    auto arr = read_npy(source);
    if (arr.shape.size() != 4 || arr.shape[2] != arr.shape[3])
      throw InputError(source.string() + ": expected an (N, C, w, w) array");
    batch = ImageBatch(arr.shape[0], arr.shape[1], arr.shape[2], std::move(arr.values));
  } else if (fs::is_directory(source) && fs::exists(source / "manifest.json")) {
    batch = load_adversarial_set(source).adversarial;
  } else if (fs::is_directory(source) && std::none_of(fs::directory_iterator(source), fs::directory_iterator{},
                                                      [](const auto& e) { return e.is_directory(); })) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(source))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError(source.string() + ": no PNG files");
    batch = ImageBatch(0, channels, side);
    for (const auto& f : files) {
      auto raw = resize_bilinear(convert_channels(read_png(f), channels), side, side);
      batch.append(ImageBatch(1, channels, side, std::move(raw.data)));
    }
    return batch;
  } else {
    IngestOptions opts;
    opts.side = side;
    opts.channels = channels;
    return ingest_dataset(source, opts).images;
  }
  if (batch.channels() != channels || batch.side() != side)
    throw InputError(source.string() + ": images do not match the model input shape");
  batch.check_unit_range();
  return batch;
}

NetworkClassifier train_target_classifier(const LabeledImages& data, const TrainConfig& cfg, TrainLog* log) {
  if (data.size() == 0) throw InputError("target dataset is empty");
  const int classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  auto net = make_small_cnn(data.images.channels(), data.images.side(), static_cast<std::size_t>(classes), 0.25);
  Rng rng(cfg.seed);
  net.initialize(rng);
  auto l = train_network(net, data.images, data.labels, cfg, [](std::size_t epoch, double loss) {
    spdlog::info("target classifier epoch {}: loss {:.4f}", epoch, loss);
  });
  ModelMetadata meta;
  meta.architecture_name = "small-cnn-dropout";
  meta.num_classes = static_cast<std::size_t>(classes);
  meta.input_side = data.images.side();
  meta.input_channels = data.images.channels();
  meta.stochastic_capable = true;
  meta.dataset_id = data.id;
  if (log) *log = std::move(l);
  return NetworkClassifier(std::move(net), meta);
}

Experiment::Experiment(ExperimentConfig cfg, bool reuse) : cfg_(cfg.resolved()), reuse_(reuse) {
  cfg_.validate();
  summary_["config"] = to_json(cfg_);
}

std::filesystem::path Experiment::attacks_dir() const { return cfg_.output_dir / "attacks" / "target"; }

std::filesystem::path Experiment::report_dir(DefenseMode mode) const {
  return cfg_.output_dir / "reports" / to_string(mode);
}

void Experiment::load_target_splits() {
  LabeledImages data;
  if (cfg_.target_dataset.empty()) {
    data = load_digits_csv(bundled_data_dir() / "mnist_5k.csv.gz");
  } else {
    IngestManifest manifest;
    data = ingest_dataset(cfg_.target_dataset, IngestOptions{}, &manifest);
    summary_["target_ingest"] = {{"loaded", manifest.loaded}, {"skipped", manifest.skipped}};
  }
  auto [train, eval] = stratified_split(data, cfg_.target_train_fraction, derive_seed(cfg_.seed, 1));
  if (cfg_.eval_size > 0 && cfg_.eval_size < eval.size()) {
    Rng rng(derive_seed(cfg_.seed, 2));
    auto idx = permutation(eval.size(), rng);
    idx.resize(cfg_.eval_size);
    std::sort(idx.begin(), idx.end());
    eval = eval.select(idx);
  }
  spdlog::info("target data {}: {} train, {} eval", data.id, train.size(), eval.size());
  target_train_ = std::move(train);
  target_eval_ = std::move(eval);
}

const LabeledImages& Experiment::target_train() {
  if (!target_train_) load_target_splits();
  return *target_train_;
}

const LabeledImages& Experiment::target_eval() {
  if (!target_eval_) load_target_splits();
  return *target_eval_;
}

const LabeledImages& Experiment::arbitrary_data() {
  if (arbitrary_) return *arbitrary_;
  const auto& target = target_train();
  if (cfg_.arbitrary_dataset == "apparel") {
    arbitrary_ = make_apparel_silhouettes(cfg_.arbitrary_samples_per_class, derive_seed(cfg_.seed, 3),
                                          target.images.side());
  } else {
    IngestOptions opts;
    opts.side = target.images.side();
    opts.channels = target.images.channels();
    opts.max_samples = cfg_.arbitrary_samples_per_class * 10;
    arbitrary_ = ingest_dataset(cfg_.arbitrary_dataset, opts);
  }
  spdlog::info("arbitrary data {}: {} samples", arbitrary_->id, arbitrary_->size());
  return *arbitrary_;
}

std::shared_ptr<NetworkClassifier> Experiment::shared_target_model() {
  if (target_model_) return target_model_;
  if (reuse_ && usable(cfg_.target_model)) {
    target_model_ = std::make_shared<NetworkClassifier>(NetworkClassifier::from_checkpoint(cfg_.target_model));
  } else {
    TrainLog log;
    target_model_ = std::make_shared<NetworkClassifier>(train_target_classifier(target_train(), cfg_.target_training, &log));
    save_checkpoint(*target_model_, cfg_.target_model);
    summary_["target_validation_accuracy"] = log.validation_accuracy;
  }
  const double acc = accuracy(predict_labels(*target_model_, target_eval().images), target_eval().labels);
  summary_["target_test_accuracy"] = acc;
  spdlog::info("target model test accuracy {:.4f}", acc);
  return target_model_;
}

NetworkClassifier& Experiment::target_model() { return *shared_target_model(); }

const NetworkClassifier& Experiment::arbitrary_model() {
  if (arbitrary_model_) return *arbitrary_model_;
  if (reuse_ && usable(cfg_.arbitrary_model)) {
    arbitrary_model_ = NetworkClassifier::from_checkpoint(cfg_.arbitrary_model);
  } else {
    TrainLog log;
    arbitrary_model_ = train_arbitrary_classifier(arbitrary_data(), cfg_.arbitrary_training, &log);
    save_checkpoint(*arbitrary_model_, cfg_.arbitrary_model);
    summary_["arbitrary_validation_accuracy"] = log.validation_accuracy;
  }
  return *arbitrary_model_;
}

const DetectionHead& Experiment::source_head() {
  if (source_head_) return *source_head_;
  if (reuse_ && usable(cfg_.source_detector)) {
    source_head_ = DetectionHead::load(cfg_.source_detector);
    return *source_head_;
  }
  const auto& model = arbitrary_model();
  const auto& data = arbitrary_data();
  // The source head sees the first configured attack.
  AttackConfig attack = cfg_.attacks.front().attack;
  attack.seed = derive_seed(cfg_.seed, 4);
  AdversarialSet set;
  const auto ds = generate_detector_dataset(model, data.images, attack, cfg_.descriptor_length,
                                            cfg_.only_fooled_source_pairs, &set);
  const auto fooled = filter_fooling(model, set).fooled_mask;
  const auto fooled_count = std::count(fooled->begin(), fooled->end(), true);
  HeadTrainLog log;
  source_head_ = train_source_head(ds.descriptors, ds.labels, cfg_.head_training, {}, &log);
  source_head_->save(cfg_.source_detector, data.id);
  summary_["arbitrary_fooled_fraction"] = double(fooled_count) / double(set.size());
  summary_["source_head_validation_accuracy"] = log.validation_accuracy;
  spdlog::info("source head trained on {} descriptor rows ({} fooled pairs)", ds.descriptors.rows, fooled_count);
  return *source_head_;
}

const AdversarialSet& Experiment::target_attacks() {
  if (attacks_) return *attacks_;
  const auto dir = attacks_dir();
  if (reuse_ && usable(dir / "manifest.json")) {
    auto cached = load_adversarial_set(dir);
    if (cached.clean.values() == target_eval().images.values()) {
      attacks_ = std::move(cached);
      return *attacks_;
    }
    spdlog::info("cached attacks in {} do not match the evaluation split; regenerating", dir.string());
  }
  auto& model = target_model();
  std::vector<AttackConfig> configs;
  std::vector<double> proportions;
  for (const auto& a : cfg_.attacks) {
    configs.push_back(a.attack);
    proportions.push_back(a.proportion);
  }
  attacks_ = filter_fooling(model, build_mixed_attack_set(model, target_eval().images, configs, proportions,
                                                          derive_seed(cfg_.seed, 5)));
  save_adversarial_set(*attacks_, dir);
  return *attacks_;
}

const EvalSet& Experiment::eval_set() {
  if (!eval_set_) {
    const auto& eval = target_eval();
    eval_set_ = build_eval_set(eval, target_attacks(), eval.labels, cfg_.ratio_clean, cfg_.ratio_adv,
                               derive_seed(cfg_.seed, 6));
  }
  return *eval_set_;
}

const TargetDetector& Experiment::target_detector() {
  if (target_detector_) return *target_detector_;
  auto model = shared_target_model();
  if (reuse_ && usable(cfg_.target_detector)) {
    target_detector_.emplace(model, DetectionHead::load(cfg_.target_detector));
    return *target_detector_;
  }
  const auto& set = eval_set();
  ImageBatch mix = set.clean;
  mix.append(set.adversarial);
  AdaptationLog log;
  AdaptationConfig acfg = cfg_.adaptation;
  acfg.seed = derive_seed(cfg_.seed, acfg.seed + 7);
  target_detector_ = adapt_target_detector(model, source_head(), mix, acfg, &log);
  target_detector_->head().save(cfg_.target_detector, target_eval().id);
  summary_["adaptation"] = {{"initial_loss", log.initial_loss},
                            {"epoch_loss", log.epoch_loss},
                            {"pseudo_label_changes", log.pseudo_label_changes}};
  return *target_detector_;
}

DefenseReport Experiment::evaluate(DefenseMode mode, bool radius_curve) {
  auto& model = target_model();
  const auto& set = eval_set();
  CleanScorer scorer;
  if (mode == DefenseMode::kSoft || mode == DefenseMode::kHard) scorer = detector_scorer(target_detector());
  EvaluateOptions opts;
  opts.defense.mode = mode;
  opts.defense.correction = cfg_.correction;
  opts.defense.seed = cfg_.seed;
  opts.random_trials = cfg_.random_trials;
  opts.radius_curve = radius_curve;
  auto report = dad::evaluate(model, scorer, set, opts);
  report.config["experiment"] = to_json(cfg_);
  emit_report(report, report_dir(mode), cfg_.plots);
  return report;
}

}  // namespace dad
