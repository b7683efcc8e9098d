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

#include "dad/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "dad/error.hpp"

namespace dad {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
  }
  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + ": bad value for '" + key + "'");
    }
  }
  void get(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace

json to_json(const AttackConfig& c) {
  return {{"kind", to_string(c.kind)},      {"epsilon", c.epsilon},
          {"step_size", c.step_size},       {"num_steps", c.num_steps},
          {"random_start", c.random_start}, {"seed", c.seed},
          {"external_path", c.external_path.string()}};
}

AttackConfig attack_config_from_json(const json& j) {
  AttackConfig c;
  Reader r(j, "attack");
  std::string kind = to_string(c.kind);
  r.get("kind", kind);
  try {
    c.kind = parse_attack_kind(kind);
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
  // Missing fields take the defaults of the chosen kind.
  if (c.kind != AttackKind::kPgd) c.random_start = false;
  r.get("epsilon", c.epsilon);
  if (c.kind == AttackKind::kFgsm) {
    c.num_steps = 1;
    c.step_size = c.epsilon;
  }
  if (c.kind == AttackKind::kExternal) c.num_steps = 0;
  r.get("step_size", c.step_size);
  r.get("num_steps", c.num_steps);
  r.get("random_start", c.random_start);
  r.get("seed", c.seed);
  r.get("external_path", c.external_path);
  return c;
}

json to_json(const SsimConfig& c) {
  return {{"window_size", c.window_size}, {"gaussian_sigma", c.gaussian_sigma}, {"k1", c.k1},
          {"k2", c.k2},                   {"dynamic_range", c.dynamic_range}};
}

SsimConfig ssim_config_from_json(const json& j) {
  SsimConfig c;
  Reader r(j, "ssim");
  r.get("window_size", c.window_size);
  r.get("gaussian_sigma", c.gaussian_sigma);
  r.get("k1", c.k1);
  r.get("k2", c.k2);
  r.get("dynamic_range", c.dynamic_range);
  return c;
}

json to_json(const CorrectionConfig& c) {
  return {{"count", c.count}, {"radius_step", c.radius_step}, {"ssim", to_json(c.ssim)}, {"seed", c.seed}};
}

CorrectionConfig correction_config_from_json(const json& j) {
  CorrectionConfig c;
  Reader r(j, "correction");
  r.get("count", c.count);
  r.get("radius_step", c.radius_step);
  r.get("seed", c.seed);
  if (const json* s = r.sub("ssim")) c.ssim = ssim_config_from_json(*s);
  return c;
}

json to_json(const AdaptationConfig& c) {
  return {{"delta", c.delta},
          {"lambda", c.lambda_pl},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"pseudo_rounds", c.pseudo_rounds},
          {"min_mix_size", c.min_mix_size},
          {"seed", c.seed}};
}

AdaptationConfig adaptation_config_from_json(const json& j) {
  AdaptationConfig c;
  Reader r(j, "adaptation");
  r.get("delta", c.delta);
  r.get("lambda", c.lambda_pl);
  r.get("epochs", c.epochs);
  r.get("learning_rate", c.learning_rate);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("batch_size", c.batch_size);
  r.get("pseudo_rounds", c.pseudo_rounds);
  r.get("min_mix_size", c.min_mix_size);
  r.get("seed", c.seed);
  return c;
}

json to_json(const HeadTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed}};
}

HeadTrainConfig head_train_config_from_json(const json& j) {
  HeadTrainConfig c;
  Reader r(j, "head_training");
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("validation_fraction", c.validation_fraction);
  r.get("seed", c.seed);
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"cosine_schedule", c.cosine_schedule},
          {"validation_fraction", c.validation_fraction},
          {"min_validation_accuracy", c.min_validation_accuracy},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  Reader r(j, "training");
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.get("cosine_schedule", c.cosine_schedule);
  r.get("validation_fraction", c.validation_fraction);
  r.get("min_validation_accuracy", c.min_validation_accuracy);
  r.get("seed", c.seed);
  return c;
}

std::string to_string(DefenseMode m) {
  switch (m) {
    case DefenseMode::kSoft:
      return "soft";
    case DefenseMode::kHard:
      return "hard";
    case DefenseMode::kCorrectionOnly:
      return "correction-only";
    case DefenseMode::kRandomRadius:
      return "random-radius";
  }
  return "unknown";
}

DefenseMode parse_defense_mode(const std::string& name) {
  if (name == "soft") return DefenseMode::kSoft;
  if (name == "hard") return DefenseMode::kHard;
  if (name == "correction-only" || name == "correction") return DefenseMode::kCorrectionOnly;
  if (name == "random-radius" || name == "random") return DefenseMode::kRandomRadius;
  throw ConfigError("unknown defense mode '" + name + "'");
}

void ExperimentConfig::validate() const {
  if (ratio_clean == 0 || ratio_adv == 0) throw ConfigError("clean:adv ratio parts must be positive");
  if (attacks.empty()) throw ConfigError("at least one attack is required");
  double total = 0;
  for (const auto& a : attacks) {
    a.attack.validate();
    if (!(a.proportion >= 0.0)) throw ConfigError("attack proportions must be non-negative");
    total += a.proportion;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("attack proportions must sum to 1");
  if (!(target_train_fraction > 0.0 && target_train_fraction < 1.0))
    throw ConfigError("target_train_fraction must lie in (0, 1)");
  if (descriptor_length == 0) throw ConfigError("descriptor_length must be positive");
  if (random_trials == 0) throw ConfigError("random_trials must be positive");
  adaptation.validate();
  correction.validate();
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  if (const char* home = std::getenv("DAD_HOME"); home && *home && c.output_dir.is_relative())
    c.output_dir = std::filesystem::path(home) / c.output_dir;
  if (c.target_model.empty()) c.target_model = output_dir / "models" / "target.bin";
  if (c.arbitrary_model.empty()) c.arbitrary_model = output_dir / "models" / "arbitrary.bin";
  if (c.source_detector.empty()) c.source_detector = output_dir / "detectors" / "source_head.bin";
  if (c.target_detector.empty()) c.target_detector = output_dir / "detectors" / "target_head.bin";
  return c;
}

json to_json(const ExperimentConfig& c) {
  json attacks = json::array();
  for (const auto& a : c.attacks) {
    json e = to_json(a.attack);
    e["proportion"] = a.proportion;
    attacks.push_back(e);
  }
  return {{"target_dataset", c.target_dataset},
          {"arbitrary_dataset", c.arbitrary_dataset},
          {"target_train_fraction", c.target_train_fraction},
          {"arbitrary_samples_per_class", c.arbitrary_samples_per_class},
          {"eval_size", c.eval_size},
          {"target_model", c.target_model.string()},
          {"arbitrary_model", c.arbitrary_model.string()},
          {"source_detector", c.source_detector.string()},
          {"target_detector", c.target_detector.string()},
          {"output_dir", c.output_dir.string()},
          {"attacks", attacks},
          {"ratio", {c.ratio_clean, c.ratio_adv}},
          {"mode", to_string(c.mode)},
          {"descriptor_length", c.descriptor_length},
          {"random_trials", c.random_trials},
          {"only_fooled_source_pairs", c.only_fooled_source_pairs},
          {"plots", c.plots},
          {"target_training", to_json(c.target_training)},
          {"arbitrary_training", to_json(c.arbitrary_training)},
          {"head_training", to_json(c.head_training)},
          {"adaptation", to_json(c.adaptation)},
          {"correction", to_json(c.correction)},
          {"seed", c.seed}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  {
    Reader r(j, "experiment");
    r.get("target_dataset", c.target_dataset);
    r.get("arbitrary_dataset", c.arbitrary_dataset);
    r.get("target_train_fraction", c.target_train_fraction);
    r.get("arbitrary_samples_per_class", c.arbitrary_samples_per_class);
    r.get("eval_size", c.eval_size);
    r.get("target_model", c.target_model);
    r.get("arbitrary_model", c.arbitrary_model);
    r.get("source_detector", c.source_detector);
    r.get("target_detector", c.target_detector);
    r.get("output_dir", c.output_dir);
    r.get("descriptor_length", c.descriptor_length);
    r.get("random_trials", c.random_trials);
    r.get("only_fooled_source_pairs", c.only_fooled_source_pairs);
    r.get("plots", c.plots);
    r.get("seed", c.seed);
    std::string mode = to_string(c.mode);
    r.get("mode", mode);
    c.mode = parse_defense_mode(mode);
    if (const json* a = r.sub("attacks")) {
      if (!a->is_array()) throw ConfigError("attacks must be an array");
      c.attacks.clear();
      for (json e : *a) {
        WeightedAttack w;
        if (e.is_object() && e.contains("proportion")) {
          if (!e["proportion"].is_number()) throw ConfigError("attack proportion must be a number");
          w.proportion = e["proportion"].get<double>();
          e.erase("proportion");
        }
        w.attack = attack_config_from_json(e);
        c.attacks.push_back(w);
      }
    }
    if (const json* ratio = r.sub("ratio")) {
      if (!ratio->is_array() || ratio->size() != 2 || !(*ratio)[0].is_number_unsigned() ||
          !(*ratio)[1].is_number_unsigned())
        throw ConfigError("ratio must be [clean, adv] with non-negative integers");
      c.ratio_clean = (*ratio)[0].get<std::size_t>();
      c.ratio_adv = (*ratio)[1].get<std::size_t>();
    }
    if (const json* s = r.sub("target_training")) c.target_training = train_config_from_json(*s);
    if (const json* s = r.sub("arbitrary_training")) c.arbitrary_training = train_config_from_json(*s);
    if (const json* s = r.sub("head_training")) c.head_training = head_train_config_from_json(*s);
    if (const json* s = r.sub("adaptation")) c.adaptation = adaptation_config_from_json(*s);
    if (const json* s = r.sub("correction")) c.correction = correction_config_from_json(*s);
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace dad
