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

#include "dad/pipeline.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "dad/error.hpp"
#include "desk_fixture.hpp"
#include "test_support.hpp"

namespace dad {
namespace {

using dad::testing::random_images;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(d);
  return d;
}

// Knows which images are clean: p = 1 for members of `clean`, 0 otherwise.
CleanScorer oracle_scorer(const ImageBatch& clean) {
  auto known = std::make_shared<std::unordered_set<std::uint64_t>>();
  for (std::size_t i = 0; i < clean.size(); ++i) known->insert(image_seed(clean.sample(i), 0));
  return [known](const ImageBatch& b) {
    std::vector<double> p(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) p[i] = known->count(image_seed(b.sample(i), 0)) ? 1.0 : 0.0;
    return p;
  };
}

EvalSet desk_eval(const NetworkClassifier& m, std::size_t n, const AttackConfig& attack) {
  const auto data = dad::testing::desk_digits_holdout(n);
  const auto adv = make_adversarial_set(m, data.images, attack);
  return build_eval_set(data, adv, data.labels, 1, 1, 3);
}

TEST(HardenTest, ThresholdAtHalf) {
  const std::vector<double> p = {0.0, 0.49, 0.5, 0.51, 1.0};
  EXPECT_EQ(harden(p), (std::vector<double>{0, 0, 1, 1, 1}));
}

TEST(DefendTest, ConfidentDetectorReproducesUndefended) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto x = dad::testing::desk_digits_holdout(40).images;
  const auto out = defend(m, constant_scorer(1.0), x);
  EXPECT_EQ(out.predictions, predict_labels(m, x));
  EXPECT_EQ(out.corrected, x);
  for (const auto& t : out.traces) EXPECT_TRUE(t.pass_through);
}

TEST(DefendTest, HardModeOracleAtZeroEpsilonBypasses) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto x = dad::testing::desk_digits_holdout(30).images;
  const auto adv = run_attack(m, x, AttackConfig::pgd(0.0, 0.01, 2, 1));
  DefenseOptions opts;
  opts.mode = DefenseMode::kHard;
  const auto out = defend(m, oracle_scorer(x), adv, opts);
  EXPECT_EQ(out.predictions, predict_labels(m, x));
  EXPECT_EQ(out.p_clean, std::vector<double>(30, 1.0));
}

TEST(DefendTest, HardModeClampsScores) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto x = dad::testing::desk_digits_holdout(6).images;
  DefenseOptions opts;
  opts.mode = DefenseMode::kHard;
  const auto scorer = [](const ImageBatch& b) {
    std::vector<double> p(b.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = i % 2 ? 0.7 : 0.3;
    return p;
  };
  const auto out = defend(m, scorer, x, opts);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(out.p_clean[i], i % 2 ? 1.0 : 0.0);
    EXPECT_EQ(out.traces[i].r_min, i % 2 ? 28.0 : 0.0);
  }
}

TEST(DefendTest, DetectorRequirements) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto x = dad::testing::desk_digits_holdout(4).images;
  EXPECT_THROW(defend(m, {}, x), StateError);
  DefenseOptions opts;
  opts.mode = DefenseMode::kCorrectionOnly;
  const auto out = defend(m, {}, x, opts);
  for (const auto& t : out.traces) EXPECT_EQ(t.r_min, 0.0);
  opts.mode = DefenseMode::kRandomRadius;
  EXPECT_EQ(defend(m, {}, x, opts).radii.size(), 4u);
}

TEST(DefendTest, ModelUntouched) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto before = m.checksum();
  const auto x = dad::testing::desk_digits_holdout(10).images;
  defend(m, constant_scorer(0.2), x);
  EXPECT_EQ(m.checksum(), before);
  EXPECT_FALSE(m.stochastic_mode());
}

TEST(RandomRadiusTest, ReproducibleAndInRange) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto x = dad::testing::desk_digits_holdout(50).images;
  const auto a = random_radius_baseline(m, x, 5);
  const auto b = random_radius_baseline(m, x, 5);
  const auto c = random_radius_baseline(m, x, 6);
  EXPECT_EQ(a.radii, b.radii);
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_NE(a.radii, c.radii);
  const auto allowed = sweep_radii(28, 2);
  std::set<double> seen;
  for (double r : a.radii) {
    EXPECT_NE(std::find(allowed.begin(), allowed.end(), r), allowed.end());
    seen.insert(r);
  }
  EXPECT_GE(seen.size(), 5u);
}

AdversarialSet identity_set(const LabeledImages& d) {
  AdversarialSet s;
  s.clean = d.images;
  s.adversarial = d.images;
  s.attack_tags.assign(d.size(), "none");
  s.epsilons.assign(d.size(), 0.0);
  return s;
}

TEST(BuildEvalSetTest, Ratios) {
  LabeledImages d{random_images(300, 1, 4, 1), std::vector<int>(300, 0), "noise"};
  const auto adv = identity_set(d);
  const auto small = d.select(std::vector<std::size_t>{0, 1, 2});
  auto counts = [&](std::size_t nc, std::size_t na, std::size_t a, std::size_t b) {
    std::vector<std::size_t> ci(nc), ai(na);
    std::iota(ci.begin(), ci.end(), 0);
    std::iota(ai.begin(), ai.end(), 0);
    const auto adv_part = adv.select(ai);
    const auto labels = std::vector<int>(na, 0);
    const auto s = build_eval_set(d.select(ci), adv_part, labels, a, b, 9);
    return std::pair(s.clean.size(), s.adversarial.size());
  };
  using Counts = std::pair<std::size_t, std::size_t>;
  EXPECT_EQ(counts(100, 100, 1, 1), Counts(100, 100));
  EXPECT_EQ(counts(300, 300, 2, 1), Counts(300, 150));
  EXPECT_EQ(counts(300, 300, 1, 2), Counts(150, 300));
  EXPECT_THROW(build_eval_set(small, adv.select(std::vector<std::size_t>{0}), std::vector<int>{0}, 5, 1, 0),
               InputError);
  EXPECT_THROW(build_eval_set(d, adv, d.labels, 0, 1, 0), ConfigError);
}

TEST(BuildEvalSetTest, DeterministicWithProvenance) {
  LabeledImages d{random_images(50, 1, 4, 2), std::vector<int>(50, 1), "noise"};
  const auto adv = identity_set(d);
  const auto a = build_eval_set(d, adv, d.labels, 2, 1, 4);
  const auto b = build_eval_set(d, adv, d.labels, 2, 1, 4);
  EXPECT_EQ(a.clean, b.clean);
  EXPECT_EQ(a.adversarial, b.adversarial);
  EXPECT_EQ(a.provenance, b.provenance);
  EXPECT_EQ(a.provenance.at("clean_indices").size(), 50u);
  EXPECT_EQ(a.provenance.at("adversarial_indices").size(), 25u);
  EXPECT_EQ(a.provenance.at("clean_source"), "noise");
}

TEST(EvaluateTest, PassThroughAtZeroEpsilonMatchesBaseline) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto set = desk_eval(m, 60, AttackConfig::pgd(0.0, 0.01, 2, 1));
  const auto r = evaluate(m, constant_scorer(1.0), set);
  EXPECT_EQ(r.all.cb_clean, r.all.baseline_clean);
  EXPECT_EQ(r.all.cb_adv, r.all.baseline_adv);
  EXPECT_EQ(r.all.td_clean, 100.0);
  EXPECT_EQ(r.all.td_adv, 0.0);
  EXPECT_EQ(r.strict.adv_count, 0u);
  EXPECT_TRUE(std::isnan(r.strict.co_a));
}

TEST(EvaluateTest, EverythingFlaggedAdversarial) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto set = desk_eval(m, 40, AttackConfig::fgsm(0.1));
  const auto r = evaluate(m, constant_scorer(0.0), set);
  EXPECT_EQ(r.all.td_clean, 0.0);
  EXPECT_EQ(r.all.td_adv, 100.0);
  // With p = 0 everywhere, soft defense of adversarials is exactly the correction-only path.
  EXPECT_EQ(r.all.cb_adv, r.all.co_a);
}

TEST(EvaluateTest, OracleHardModeIdentities) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto before = m.checksum();
  const auto set = desk_eval(m, 120, AttackConfig::pgd(0.3, 0.3 / 8, 10, 2));
  EvaluateOptions opts;
  opts.defense.mode = DefenseMode::kHard;
  opts.radius_curve = true;
  const auto r = evaluate(m, oracle_scorer(set.clean), set, opts);
  EXPECT_EQ(r.all.cb_clean, r.all.baseline_clean);
  EXPECT_EQ(r.all.cb_adv, r.all.co_a);
  EXPECT_EQ(r.strict.baseline_adv, 0.0);
  EXPECT_GT(r.strict.adv_count, 0u);
  EXPECT_LE(r.strict.cb_adv, r.strict.co_a);
  EXPECT_EQ(r.all.random_co_a_trials.size(), 5u);
  EXPECT_EQ(r.radius_curve.size(), 7u);
  EXPECT_EQ(m.checksum(), before);
}

TEST(EvaluateTest, StrictMaskDefinition) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto set = desk_eval(m, 50, AttackConfig::fgsm(0.2));
  const auto mask = strict_adversarial_mask(m, set);
  const auto o = predict_labels(m, set.adversarial_origin);
  const auto a = predict_labels(m, set.adversarial);
  for (std::size_t i = 0; i < mask.size(); ++i)
    EXPECT_EQ(mask[i], o[i] == set.adversarial_labels[i] && a[i] != set.adversarial_labels[i]);
}

TEST(EvaluateTest, LabelMismatch) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  auto set = desk_eval(m, 10, AttackConfig::fgsm(0.1));
  set.clean_labels.pop_back();
  EXPECT_THROW(evaluate(m, constant_scorer(1.0), set), InputError);
}

TEST(ReportTest, JsonRoundtripAndCsvSchema) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto set = desk_eval(m, 30, AttackConfig::fgsm(0.15));
  EvaluateOptions opts;
  opts.radius_curve = true;
  const auto r = evaluate(m, constant_scorer(0.4), set, opts);
  const auto dir = fresh_dir("dad_report_test");
  emit_report(r, dir, true);
  const auto back = report_from_json(nlohmann::json::parse(slurp(dir / "report.json")));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
  EXPECT_EQ(back.all.co_a, r.all.co_a);
  EXPECT_EQ(back.mode, r.mode);

  std::istringstream csv(slurp(dir / "report.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header,
            "mode,view,TD.A-clean,TD.A-adv,Co.A,Cb.A-clean,Cb.A-adv,baseline-clean,baseline-adv,"
            "random-Co.A,clean-count,adv-count");
  std::size_t rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  EXPECT_EQ(rows, 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "plots" / "accuracy_vs_radius.png"));
}

TEST(ReportTest, SameSeedSameCsv) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto set = desk_eval(m, 30, AttackConfig::fgsm(0.15));
  const auto d1 = fresh_dir("dad_report_a"), d2 = fresh_dir("dad_report_b");
  emit_report(evaluate(m, constant_scorer(0.3), set), d1);
  emit_report(evaluate(m, constant_scorer(0.3), set), d2);
  EXPECT_EQ(slurp(d1 / "report.csv"), slurp(d2 / "report.csv"));
}

TEST(ReportTest, UnwritableDirectory) {
  const auto file = fresh_dir("dad_report_blocker");
  std::ofstream(file) << "x";
  EXPECT_THROW(emit_report(DefenseReport{}, file / "sub"), IoError);
}

TEST(BenchTest, EmptyAndAccounting) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto pool = dad::testing::desk_digits_holdout(50).images;
  const auto zero = bench_runtime(m, constant_scorer(0.2), pool, 0);
  EXPECT_EQ(zero.samples, 0u);
  EXPECT_EQ(zero.times.total, 0.0);
  const auto rec = bench_runtime(m, constant_scorer(0.2), pool, 120);
  const auto& t = rec.times;
  EXPECT_NEAR(t.detect + t.sweep + t.correct + t.classify, t.total, 0.05 * t.total);
}

TEST(BenchTest, NearLinearScaling) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto pool = dad::testing::desk_digits_holdout(400).images;
  DefenseOptions opts;
  opts.mode = DefenseMode::kCorrectionOnly;
  const double t200 = bench_runtime(m, {}, pool, 200, opts).times.total;
  const double t400 = bench_runtime(m, {}, pool, 400, opts).times.total;
  std::printf("200: %.3fs 400: %.3fs\n", t200, t400);
  EXPECT_LE(t400 / t200, 2.5);
}

}  // namespace
}  // namespace dad
