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

#include <gtest/gtest.h>

#include <fstream>

#include "dad/error.hpp"

namespace dad {
namespace {

using nlohmann::json;

TEST(ConfigTest, DefaultsRoundtrip) {
  const ExperimentConfig c;
  const auto back = experiment_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(ConfigTest, PartialObjectKeepsDefaults) {
  const auto c = experiment_config_from_json(json::parse(R"({"seed": 4, "adaptation": {"lambda": 0.5}})"));
  EXPECT_EQ(c.seed, 4u);
  EXPECT_EQ(c.adaptation.lambda_pl, 0.5);
  EXPECT_EQ(c.adaptation.delta, 1.0);
  EXPECT_EQ(c.correction.count, 10u);
  EXPECT_EQ(c.mode, DefenseMode::kSoft);
}

TEST(ConfigTest, MixedAttacksAndRatio) {
  const auto c = experiment_config_from_json(json::parse(R"({
    "attacks": [{"kind": "pgd", "epsilon": 0.03, "proportion": 0.5},
                {"kind": "fgsm", "epsilon": 0.03, "proportion": 0.5}],
    "ratio": [2, 1], "mode": "hard"})"));
  ASSERT_EQ(c.attacks.size(), 2u);
  EXPECT_EQ(c.attacks[1].attack.kind, AttackKind::kFgsm);
  EXPECT_EQ(c.ratio_clean, 2u);
  EXPECT_EQ(c.mode, DefenseMode::kHard);
}

TEST(ConfigTest, Rejections) {
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"sed": 1})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"correction": {"count": "ten"}})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"ratio": [0, 1]})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"mode": "medium"})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(
                   R"({"attacks": [{"kind": "pgd", "epsilon": 0.03, "proportion": 0.7}]})")),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"attacks": [{"kind": "cw", "epsilon": 0.1}]})")),
               ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"correction": {"radius_step": 3}})")), ConfigError);
}

TEST(ConfigTest, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "dad_config_test.json";
  std::ofstream(path) << R"({"output_dir": "/tmp/x", "eval_size": 12})";
  const auto c = load_experiment_config(path);
  EXPECT_EQ(c.eval_size, 12u);
  EXPECT_EQ(c.resolved().target_model, std::filesystem::path("/tmp/x/models/target.bin"));
  std::ofstream(path) << "{not json";
  EXPECT_THROW(load_experiment_config(path), ConfigError);
  EXPECT_THROW(load_experiment_config("/nonexistent/dad.json"), ConfigError);
}

TEST(ConfigTest, ModeNames) {
  for (auto m : {DefenseMode::kSoft, DefenseMode::kHard, DefenseMode::kCorrectionOnly, DefenseMode::kRandomRadius})
    EXPECT_EQ(parse_defense_mode(to_string(m)), m);
}

}  // namespace
}  // namespace dad
