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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "dad/config.hpp"
#include "dad/correction.hpp"
#include "dad/error.hpp"
#include "dad/experiment.hpp"
#include "dad/image_io.hpp"
#include "dad/pipeline.hpp"
#include "dad/spectral.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Options shared by every subcommand. Unset optionals leave the config file
// (or the built-in defaults) alone.
struct Common {
  std::string config;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::string log_level = "info";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config");
  cmd->add_option("--output-dir", c.output_dir, "Root for models, attacks and reports (relative: under $DAD_HOME)");
  cmd->add_option("--seed", c.seed, "Experiment seed");
  cmd->add_option("--log-level", c.log_level, "trace|debug|info|warn|error|off");
}

dad::ExperimentConfig base_config(const Common& c) {
  dad::ExperimentConfig cfg = c.config.empty() ? dad::ExperimentConfig{} : dad::load_experiment_config(c.config);
  if (c.output_dir) cfg.output_dir = *c.output_dir;
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

void set_log_level(const std::string& name) {
  const auto level = spdlog::level::from_str(name);
  if (level == spdlog::level::off && name != "off") throw dad::ConfigError("unknown log level: " + name);
  spdlog::set_level(level);
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

std::pair<std::size_t, std::size_t> parse_ratio(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(text);
    std::size_t a = std::stoul(text.substr(0, colon)), b = std::stoul(text.substr(colon + 1));
    return {a, b};
  } catch (const std::exception&) {
    throw dad::ConfigError("ratio must look like CLEAN:ADV, got " + text);
  }
}

void remove_cached(const fs::path& p) {
  std::error_code ec;
  fs::remove_all(p, ec);
}

// ---------------------------------------------------------------------------

struct TrainOpts {
  Common common;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::size_t> epochs;
};

int run_train_target(const TrainOpts& o) {
  auto cfg = base_config(o.common);
  if (o.data) cfg.target_dataset = *o.data;
  if (o.out) cfg.target_model = *o.out;
  if (o.epochs) cfg.target_training.epochs = *o.epochs;
  dad::Experiment exp(cfg, false);
  exp.target_model();
  json out = exp.summary();
  out["checkpoint"] = exp.config().target_model.string();
  print_json(out);
  return 0;
}

int run_train_arbitrary(const TrainOpts& o) {
  auto cfg = base_config(o.common);
  if (o.data) cfg.arbitrary_dataset = *o.data;
  if (o.out) cfg.arbitrary_model = *o.out;
  if (o.epochs) cfg.arbitrary_training.epochs = *o.epochs;
  dad::Experiment exp(cfg, false);
  exp.arbitrary_model();
  json out = exp.summary();
  out["checkpoint"] = exp.config().arbitrary_model.string();
  print_json(out);
  return 0;
}

struct AttackOpts {
  Common common;
  std::optional<std::string> kind;
  std::optional<double> epsilon;
  std::optional<double> step_size;
  std::optional<std::size_t> steps;
  std::optional<std::string> model;
  std::optional<std::string> out;
};

int run_gen_attacks(const AttackOpts& o) {
  auto cfg = base_config(o.common);
  if (o.model) cfg.target_model = *o.model;
  if (o.kind || o.epsilon || o.step_size || o.steps) {
    json j = dad::to_json(cfg.attacks.front().attack);
    if (o.kind) {
      j = json{{"kind", *o.kind}};
      if (o.kind != "pgd") j["random_start"] = false;
    }
    if (o.epsilon) j["epsilon"] = *o.epsilon;
    if (o.step_size) j["step_size"] = *o.step_size;
    if (o.steps) j["num_steps"] = *o.steps;
    cfg.attacks = {{dad::attack_config_from_json(j), 1.0}};
  }
  dad::Experiment exp(cfg);
  remove_cached(exp.attacks_dir());
  const auto& set = exp.target_attacks();
  fs::path dir = exp.attacks_dir();
  if (o.out) {
    dad::save_adversarial_set(set, *o.out);
    dir = *o.out;
  }
  const auto fooled = set.fooled_mask ? std::count(set.fooled_mask->begin(), set.fooled_mask->end(), true) : 0;
  print_json({{"directory", dir.string()}, {"samples", set.size()}, {"fooled", fooled}});
  return 0;
}

struct DetectorOpts {
  Common common;
  std::optional<std::string> out;
  std::optional<std::size_t> epochs;
  bool only_fooled = false;
};

int run_train_detector(const DetectorOpts& o) {
  auto cfg = base_config(o.common);
  if (o.out) cfg.source_detector = *o.out;
  if (o.epochs) cfg.head_training.epochs = *o.epochs;
  if (o.only_fooled) cfg.only_fooled_source_pairs = true;
  dad::Experiment exp(cfg);
  remove_cached(exp.config().source_detector);
  exp.source_head();
  json out = exp.summary();
  out["checkpoint"] = exp.config().source_detector.string();
  print_json(out);
  return 0;
}

struct AdaptOpts {
  Common common;
  std::optional<std::string> mix;
  std::optional<std::string> source;
  std::optional<std::string> model;
  std::optional<std::string> out;
  std::optional<double> delta;
  std::optional<double> lambda;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> adapt_seed;
};

int run_adapt_detector(const AdaptOpts& o) {
  auto cfg = base_config(o.common);
  if (o.source) cfg.source_detector = *o.source;
  if (o.model) cfg.target_model = *o.model;
  if (o.out) cfg.target_detector = *o.out;
  if (o.delta) cfg.adaptation.delta = *o.delta;
  if (o.lambda) cfg.adaptation.lambda_pl = *o.lambda;
  if (o.epochs) cfg.adaptation.epochs = *o.epochs;
  if (o.adapt_seed) cfg.adaptation.seed = *o.adapt_seed;
  cfg.adaptation.validate();

  if (!o.mix) {
    dad::Experiment exp(cfg);
    remove_cached(exp.config().target_detector);
    exp.target_detector();
    json out = exp.summary();
    out["checkpoint"] = exp.config().target_detector.string();
    print_json(out);
    return 0;
  }

  // Explicit mix: no experiment stages beyond loading the two checkpoints.
  cfg = cfg.resolved();
  auto model = std::make_shared<dad::NetworkClassifier>(dad::NetworkClassifier::from_checkpoint(cfg.target_model));
  const auto source = dad::DetectionHead::load(cfg.source_detector);
  const auto& meta = model->metadata();
  const fs::path mix_path = *o.mix;
  dad::ImageBatch mix;
  if (fs::is_directory(mix_path) && fs::exists(mix_path / "manifest.json")) {
    const auto set = dad::load_adversarial_set(mix_path);
    mix = set.clean;
    mix.append(set.adversarial);
  } else {
    mix = dad::load_image_input(mix_path, meta.input_channels, meta.input_side);
  }
  dad::AdaptationLog log;
  const auto detector = dad::adapt_target_detector(model, source, mix, cfg.adaptation, &log);
  fs::create_directories(cfg.target_detector.parent_path());
  detector.head().save(cfg.target_detector, mix_path.filename().string());
  print_json({{"checkpoint", cfg.target_detector.string()},
              {"mix_size", mix.size()},
              {"initial_loss", log.initial_loss},
              {"epoch_loss", log.epoch_loss}});
  return 0;
}

struct DefendOpts {
  Common common;
  std::string input;
  std::optional<std::string> detector;
  std::optional<std::string> model;
  std::string out = "defended";
  std::optional<std::string> mode;
  std::optional<std::string> dump_spectra;
  bool trace = false;
};

int run_defend(const DefendOpts& o) {
  auto cfg = base_config(o.common);
  if (o.detector) cfg.target_detector = *o.detector;
  if (o.model) cfg.target_model = *o.model;
  if (o.mode) cfg.mode = dad::parse_defense_mode(*o.mode);
  cfg = cfg.resolved();

  auto model = std::make_shared<dad::NetworkClassifier>(dad::NetworkClassifier::from_checkpoint(cfg.target_model));
  const auto& meta = model->metadata();
  const auto batch = dad::load_image_input(o.input, meta.input_channels, meta.input_side);

  std::optional<dad::TargetDetector> detector;
  dad::CleanScorer scorer;
  if (cfg.mode == dad::DefenseMode::kSoft || cfg.mode == dad::DefenseMode::kHard) {
    detector.emplace(model, dad::DetectionHead::load(cfg.target_detector));
    scorer = dad::detector_scorer(*detector);
  }
  dad::DefenseOptions opts;
  opts.mode = cfg.mode;
  opts.correction = cfg.correction;
  opts.seed = cfg.seed;
  const auto undefended = dad::predict_labels(*model, batch);
  const auto result = dad::defend(*model, scorer, batch, opts);

  const fs::path out = o.out;
  fs::create_directories(out);
  const std::vector<std::size_t> shape = {result.corrected.size(), result.corrected.channels(),
                                          result.corrected.side(), result.corrected.side()};
  dad::write_npy(out / "corrected.npy", shape, result.corrected.values());
  {
    std::ofstream csv(out / "predictions.csv");
    if (!csv) throw dad::IoError((out / "predictions.csv").string() + ": cannot write");
    csv << "index,prediction,undefended,p_clean,radius\n";
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double p = i < result.p_clean.size() ? result.p_clean[i] : 0.0;
      csv << i << ',' << result.predictions[i] << ',' << undefended[i] << ',' << p << ',' << result.radii[i] << '\n';
    }
  }
  if (o.trace) dad::write_trace(out / "trace.jsonl", result.traces);
  if (o.dump_spectra) {
    const fs::path dir = *o.dump_spectra;
    fs::create_directories(dir);
    char stem[32];
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::snprintf(stem, sizeof stem, "%05zu", i);
      dad::dump_spectrum_png(dad::fft2(batch.sample(i), batch.channels(), batch.side()),
                             dir / (std::string(stem) + "_input"));
      dad::dump_spectrum_png(dad::fft2(result.corrected.sample(i), batch.channels(), batch.side()),
                             dir / (std::string(stem) + "_corrected"));
    }
  }
  std::size_t changed = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) changed += result.predictions[i] != undefended[i];
  print_json({{"samples", batch.size()},
              {"mode", dad::to_string(cfg.mode)},
              {"changed_predictions", changed},
              {"output", out.string()},
              {"times", dad::to_json(result.times)}});
  return 0;
}

struct EvaluateOpts {
  Common common;
  std::vector<std::string> modes;
  std::optional<std::string> ratio;
  bool plots = false;
  bool radius_curve = false;
};

json view_json(const dad::ViewMetrics& v) {
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(nullptr); };
  return {{"clean_count", v.clean_count}, {"adv_count", v.adv_count}, {"TD.A", {num(v.td_clean), num(v.td_adv)}},
          {"Co.A", num(v.co_a)},          {"Cb.A", {num(v.cb_clean), num(v.cb_adv)}},
          {"baseline", {num(v.baseline_clean), num(v.baseline_adv)}},
          {"random-Co.A", num(v.random_co_a)}};
}

int run_evaluate(const EvaluateOpts& o) {
  auto cfg = base_config(o.common);
  if (o.ratio) std::tie(cfg.ratio_clean, cfg.ratio_adv) = parse_ratio(*o.ratio);
  if (o.plots) cfg.plots = true;
  cfg.validate();
  std::vector<dad::DefenseMode> modes;
  for (const auto& m : o.modes) {
    if (m == "all") {
      modes = {dad::DefenseMode::kSoft, dad::DefenseMode::kHard, dad::DefenseMode::kCorrectionOnly,
               dad::DefenseMode::kRandomRadius};
      break;
    }
    modes.push_back(dad::parse_defense_mode(m));
  }
  if (modes.empty()) modes.push_back(cfg.mode);

  dad::Experiment exp(cfg);
  json out = json::object();
  for (auto mode : modes) {
    const auto report = exp.evaluate(mode, o.radius_curve || cfg.plots);
    out[dad::to_string(mode)] = {{"all", view_json(report.all)},
                                 {"fooled-only", view_json(report.strict)},
                                 {"runtime_seconds", report.runtime_seconds},
                                 {"report", exp.report_dir(mode).string()}};
  }
  out["summary"] = exp.summary();
  print_json(out);
  return 0;
}

struct BenchOpts {
  Common common;
  std::vector<std::size_t> samples = {200, 800};
  std::optional<std::string> mode;
};

int run_bench(const BenchOpts& o) {
  auto cfg = base_config(o.common);
  if (o.mode) cfg.mode = dad::parse_defense_mode(*o.mode);
  dad::Experiment exp(cfg);
  auto& model = exp.target_model();
  const auto& set = exp.eval_set();
  dad::ImageBatch pool = set.clean;
  pool.append(set.adversarial);
  dad::CleanScorer scorer;
  if (cfg.mode == dad::DefenseMode::kSoft || cfg.mode == dad::DefenseMode::kHard)
    scorer = dad::detector_scorer(exp.target_detector());
  dad::DefenseOptions opts;
  opts.mode = cfg.mode;
  opts.correction = cfg.correction;
  opts.seed = cfg.seed;
  json rows = json::array();
  for (auto n : o.samples) {
    const auto rec = dad::bench_runtime(model, scorer, pool, n, opts);
    rows.push_back({{"samples", rec.samples}, {"times", dad::to_json(rec.times)}});
  }
  const fs::path file = exp.config().output_dir / "bench.json";
  fs::create_directories(file.parent_path());
  std::ofstream(file) << rows.dump(2) << "\n";
  print_json(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("dad"));

  CLI::App app{"Data-free test-time adversarial defense"};
  app.require_subcommand(1);

  TrainOpts target, arbitrary;
  auto* c_target = app.add_subcommand("train-target", "Train the protected digits classifier");
  add_common(c_target, target.common);
  c_target->add_option("--data", target.data, "Dataset path (default: bundled digits)");
  c_target->add_option("--out", target.out, "Checkpoint path");
  c_target->add_option("--epochs", target.epochs);

  auto* c_arbitrary = app.add_subcommand("train-arbitrary", "Train the classifier on the arbitrary dataset");
  add_common(c_arbitrary, arbitrary.common);
  c_arbitrary->add_option("--data", arbitrary.data, "\"apparel\" or a dataset path");
  c_arbitrary->add_option("--out", arbitrary.out, "Checkpoint path");
  c_arbitrary->add_option("--epochs", arbitrary.epochs);

  AttackOpts attack;
  auto* c_attack = app.add_subcommand("gen-attacks", "Attack the target evaluation split");
  add_common(c_attack, attack.common);
  c_attack->add_option("--attack", attack.kind, "fgsm|bim|pgd (replaces the configured mix)");
  c_attack->add_option("--epsilon", attack.epsilon);
  c_attack->add_option("--step-size", attack.step_size);
  c_attack->add_option("--steps", attack.steps);
  c_attack->add_option("--model", attack.model, "Target checkpoint");
  c_attack->add_option("--out", attack.out, "Extra copy of the adversarial-set directory");

  DetectorOpts detector;
  auto* c_detector = app.add_subcommand("train-detector", "Train the source detection head");
  add_common(c_detector, detector.common);
  c_detector->add_option("--out", detector.out, "Head checkpoint path");
  c_detector->add_option("--epochs", detector.epochs);
  c_detector->add_flag("--only-fooled", detector.only_fooled, "Keep only pairs whose attack changed the label");

  AdaptOpts adapt;
  auto* c_adapt = app.add_subcommand("adapt-detector", "Adapt the source head to unlabeled target data");
  add_common(c_adapt, adapt.common);
  c_adapt->add_option("--mix", adapt.mix, "Unlabeled images (default: the experiment's evaluation mix)");
  c_adapt->add_option("--source", adapt.source, "Source head checkpoint");
  c_adapt->add_option("--model", adapt.model, "Target checkpoint");
  c_adapt->add_option("--out", adapt.out, "Adapted head checkpoint");
  c_adapt->add_option("--delta", adapt.delta);
  c_adapt->add_option("--lambda", adapt.lambda);
  c_adapt->add_option("--epochs", adapt.epochs);
  c_adapt->add_option("--adapt-seed", adapt.adapt_seed);

  DefendOpts defend;
  auto* c_defend = app.add_subcommand("defend", "Detect, correct and classify unlabeled images");
  add_common(c_defend, defend.common);
  c_defend->add_option("--input", defend.input, "Images: .npy, PNG directory, adversarial set or dataset")
      ->required();
  c_defend->add_option("--detector", defend.detector, "Adapted head checkpoint");
  c_defend->add_option("--model", defend.model, "Target checkpoint");
  c_defend->add_option("--out", defend.out, "Output directory");
  c_defend->add_option("--mode", defend.mode, "soft|hard|correction-only|random-radius");
  c_defend->add_flag("--trace", defend.trace, "Write per-sample correction records");
  c_defend->add_option("--dump-spectra", defend.dump_spectra, "Write input/corrected magnitude spectra as PNG");

  EvaluateOpts evaluate;
  auto* c_evaluate = app.add_subcommand("evaluate", "Run the experiment and write reports");
  add_common(c_evaluate, evaluate.common);
  c_evaluate->add_option("--mode", evaluate.modes, "soft|hard|correction-only|random-radius|all (repeatable)");
  c_evaluate->add_option("--ratio", evaluate.ratio, "CLEAN:ADV, e.g. 1:1");
  c_evaluate->add_flag("--plots", evaluate.plots, "Write plots/*.png");
  c_evaluate->add_flag("--radius-curve", evaluate.radius_curve, "Accuracy versus fixed radius");

  BenchOpts bench;
  auto* c_bench = app.add_subcommand("bench", "Time the defense at several batch sizes");
  add_common(c_bench, bench.common);
  c_bench->add_option("--samples", bench.samples, "Sample counts")->delimiter(',');
  c_bench->add_option("--mode", bench.mode);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : static_cast<int>(dad::ExitCode::kConfig);
  }

  try {
    if (*c_target) return set_log_level(target.common.log_level), run_train_target(target);
    if (*c_arbitrary) return set_log_level(arbitrary.common.log_level), run_train_arbitrary(arbitrary);
    if (*c_attack) return set_log_level(attack.common.log_level), run_gen_attacks(attack);
    if (*c_detector) return set_log_level(detector.common.log_level), run_train_detector(detector);
    if (*c_adapt) return set_log_level(adapt.common.log_level), run_adapt_detector(adapt);
    if (*c_defend) return set_log_level(defend.common.log_level), run_defend(defend);
    if (*c_evaluate) return set_log_level(evaluate.common.log_level), run_evaluate(evaluate);
    if (*c_bench) return set_log_level(bench.common.log_level), run_bench(bench);
  } catch (const dad::Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(dad::ExitCode::kFailure);
  }
  return 0;
}
