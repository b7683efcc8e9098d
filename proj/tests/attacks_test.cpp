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

#include "dad/attacks.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dad/error.hpp"
#include "dad/image_io.hpp"
#include "desk_fixture.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace dad {
namespace {

using dad::testing::linear_classifier;
using dad::testing::random_images;
using dad::testing::StubClassifier;

NetworkClassifier random_cnn(std::uint64_t seed) {
  auto net = make_small_cnn(1, 8, 3, 0.0);
  Rng rng(seed);
  net.initialize(rng);
  ModelMetadata meta;
  meta.architecture_name = "cnn8";
  meta.num_classes = 3;
  meta.input_side = 8;
  return NetworkClassifier(std::move(net), meta);
}

void expect_in_ball(const ImageBatch& adv, const ImageBatch& clean, double eps) {
  ASSERT_EQ(adv.size(), clean.size());
  EXPECT_TRUE(adv.in_unit_range());
  for (std::size_t i = 0; i < adv.size(); ++i) EXPECT_LE(linf_distance(adv.sample(i), clean.sample(i)), eps + 1e-7);
}

int sgn(double v) { return (v > 0) - (v < 0); }

TEST(FgsmTest, ZeroEpsilonIsIdentity) {
  const auto m = random_cnn(1);
  const auto x = random_images(6, 1, 8, 2);
  EXPECT_EQ(fgsm(m, x, AttackConfig::fgsm(0.0)), x);
  EXPECT_EQ(bim(m, x, AttackConfig::bim(0.0, 0.01, 5)), x);
  EXPECT_EQ(pgd(m, x, AttackConfig::pgd(0.0, 0.01, 5, 3)), x);
}

TEST(FgsmTest, LogisticToySignMatchesClosedForm) {
  // One pixel, two classes: z = (w0 x + b0, w1 x + b1).
  const double w0 = -0.5, w1 = 2.0;
  const auto m = linear_classifier(1, 1, 2, {w0, w1}, {0.3, -0.4});
  for (double x0 : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    ImageBatch x(1, 1, 1, std::vector<double>{x0});
    const double z0 = w0 * x0 + 0.3, z1 = w1 * x0 - 0.4;
    const int y = z1 > z0 ? 1 : 0;
    const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
    // dCE/dx = (p1 - [y == 1]) (w1 - w0)
    const double grad = (p1 - (y == 1 ? 1.0 : 0.0)) * (w1 - w0);
    const double eps = 0.05;
    const auto adv = fgsm(m, x, AttackConfig::fgsm(eps));
    EXPECT_NEAR(adv.values()[0], std::clamp(x0 + eps * sgn(grad), 0.0, 1.0), 1e-15);
  }
}

TEST(FgsmTest, NegativeEpsilonIsConfigError) {
  const auto m = random_cnn(1);
  EXPECT_THROW(fgsm(m, random_images(1, 1, 8, 1), AttackConfig::fgsm(-0.1)), ConfigError);
  auto wrong = AttackConfig::fgsm(0.1);
  wrong.num_steps = 2;
  EXPECT_THROW(wrong.validate(), ConfigError);
  EXPECT_THROW(bim(m, random_images(1, 1, 8, 1), AttackConfig::fgsm(0.1)), ConfigError);
}

TEST(AttackBoundsTest, EveryKindStaysInBallAndRange) {
  const auto m = random_cnn(4);
  auto x = random_images(20, 1, 8, 5);
  // Saturated pixels exercise the [0, 1] clip.
  for (std::size_t i = 0; i < x.values().size(); i += 3) x.values()[i] = (i % 2) ? 1.0 : 0.0;
  for (double eps : {1.0 / 255, 8.0 / 255, 0.1, 0.3}) {
    expect_in_ball(fgsm(m, x, AttackConfig::fgsm(eps)), x, eps);
    expect_in_ball(bim(m, x, AttackConfig::bim(eps, eps / 3, 7)), x, eps);
    expect_in_ball(pgd(m, x, AttackConfig::pgd(eps, eps / 4, 5, 9)), x, eps);
  }
}

TEST(BimTest, OneStepEqualsFgsm) {
  const auto m = random_cnn(6);
  const auto x = random_images(10, 1, 8, 7);
  const double eps = 0.07;
  EXPECT_EQ(bim(m, x, AttackConfig::bim(eps, eps, 1)), fgsm(m, x, AttackConfig::fgsm(eps)));
}

TEST(BimTest, EveryIterateInBall) {
  const auto m = random_cnn(8);
  const auto x = random_images(8, 1, 8, 9);
  for (std::size_t steps = 1; steps <= 6; ++steps) {
    expect_in_ball(bim(m, x, AttackConfig::bim(0.05, 0.02, steps)), x, 0.05);
    expect_in_ball(pgd(m, x, AttackConfig::pgd(0.05, 0.02, steps, 1)), x, 0.05);
  }
}

TEST(BimTest, TwoPixelManualUnroll) {
  // Two channels of a 1x1 image act as two pixels; three classes.
  const std::vector<double> w = {1.0, -2.0, 0.5, -1.5, 0.25, 2.0};  // (2, 3)
  const std::vector<double> b = {0.0, 0.1, -0.2};
  const auto m = linear_classifier(2, 1, 3, w, b);
  const std::vector<double> x0 = {0.4, 0.6};

  auto logits = [&](const std::vector<double>& x) {
    std::vector<double> z(3);
    for (int k = 0; k < 3; ++k) z[k] = b[k] + x[0] * w[k] + x[1] * w[3 + k];
    return z;
  };
  auto z0 = logits(x0);
  const int y = int(std::max_element(z0.begin(), z0.end()) - z0.begin());
  const double eps = 0.1, step = 0.06;
  std::vector<double> x = x0;
  for (int t = 0; t < 2; ++t) {
    auto z = logits(x);
    double mx = *std::max_element(z.begin(), z.end()), s = 0;
    std::vector<double> p(3);
    for (int k = 0; k < 3; ++k) s += p[k] = std::exp(z[k] - mx);
    for (auto& v : p) v /= s;
    for (int i = 0; i < 2; ++i) {
      double g = 0;
      for (int k = 0; k < 3; ++k) g += (p[k] - (k == y)) * w[i * 3 + k];
      x[i] = std::clamp(std::clamp(x[i] + step * sgn(g), x0[i] - eps, x0[i] + eps), 0.0, 1.0);
    }
  }
  const auto adv = bim(m, ImageBatch(1, 2, 1, x0), AttackConfig::bim(eps, step, 2));
  EXPECT_NEAR(adv.values()[0], x[0], 1e-12);
  EXPECT_NEAR(adv.values()[1], x[1], 1e-12);
}

TEST(PgdTest, NoRandomStartEqualsBim) {
  const auto m = random_cnn(10);
  const auto x = random_images(5, 1, 8, 11);
  auto cfg = AttackConfig::pgd(0.05, 0.01, 4, 3);
  cfg.random_start = false;
  EXPECT_EQ(pgd(m, x, cfg), bim(m, x, AttackConfig::bim(0.05, 0.01, 4)));
}

TEST(PgdTest, SeedDeterminism) {
  const auto m = random_cnn(12);
  const auto x = random_images(5, 1, 8, 13);
  EXPECT_EQ(pgd(m, x, AttackConfig::pgd(0.05, 0.01, 3, 1)), pgd(m, x, AttackConfig::pgd(0.05, 0.01, 3, 1)));
  EXPECT_NE(pgd(m, x, AttackConfig::pgd(0.05, 0.01, 3, 1)), pgd(m, x, AttackConfig::pgd(0.05, 0.01, 3, 2)));
}

TEST(PgdTest, ChunkedBatchMatchesPerSample) {
  const auto m = random_cnn(14);
  const auto x = random_images(300, 1, 8, 15);
  const auto cfg = AttackConfig::pgd(0.05, 0.01, 2, 4);
  const auto whole = run_attack(m, x, cfg);
  for (std::size_t i : {0u, 17u, 255u, 256u, 299u}) {
    const auto one = run_attack(m, x.slice(i, i + 1), cfg, i);
    EXPECT_TRUE(std::equal(one.values().begin(), one.values().end(), whole.sample(i).begin()));
  }
}

TEST(PgdTest, DeskModelMoreStepsNotWeaker) {
  const auto& m = dad::testing::desk_digits_model();
  const auto data = dad::testing::desk_digits_holdout(300);
  const double eps = 0.15;
  const auto few = run_attack(m, data.images, AttackConfig::pgd(eps, 0.03, 3, 1));
  const auto many = run_attack(m, data.images, AttackConfig::pgd(eps, 0.03, 20, 1));
  const double acc_few = accuracy(predict_labels(m, few), data.labels);
  const double acc_many = accuracy(predict_labels(m, many), data.labels);
  EXPECT_LE(acc_many, acc_few + 0.02);
  EXPECT_LT(acc_many, accuracy(predict_labels(m, data.images), data.labels));
}

// Label = 1 when the mean intensity exceeds 0.5.
StubClassifier mean_threshold_stub() {
  return StubClassifier(2, 2, 1, false, [](const ImageBatch& b, bool, std::span<Rng>) {
    Logits z(b.size(), 2);
    for (std::size_t i = 0; i < b.size(); ++i) {
      double mean = 0;
      for (double v : b.sample(i)) mean += v;
      mean /= double(b.sample_size());
      z(i, 1) = mean - 0.5;
    }
    return z;
  });
}

TEST(FilterFoolingTest, ZeroEpsilonNothingFooled) {
  const auto m = random_cnn(16);
  const auto set = filter_fooling(m, make_adversarial_set(m, random_images(12, 1, 8, 17), AttackConfig::fgsm(0.0)));
  ASSERT_TRUE(set.fooled_mask);
  for (bool f : *set.fooled_mask) EXPECT_FALSE(f);
  EXPECT_EQ(fooled_only(set).size(), 0u);
}

TEST(FilterFoolingTest, FlippedCopiesAllFooled) {
  const auto stub = mean_threshold_stub();
  AdversarialSet set;
  set.clean = random_images(10, 1, 2, 18);
  set.adversarial = set.clean;
  for (std::size_t i = 0; i < set.size(); ++i) {
    double mean = 0;
    for (double v : set.clean.sample(i)) mean += v;
    for (auto& v : set.adversarial.sample(i)) v = mean / 4 > 0.5 ? 0.1 : 0.9;
  }
  set.attack_tags.assign(10, "manual");
  set.epsilons.assign(10, 1.0);
  const auto out = filter_fooling(stub, set);
  for (bool f : *out.fooled_mask) EXPECT_TRUE(f);
  EXPECT_EQ(fooled_only(out).size(), 10u);
}

TEST(FilterFoolingTest, MatchesDirectComparison) {
  Rng rng(19);
  std::vector<double> w(12), b(3);
  for (auto& v : w) v = normal(rng, 0, 1);
  for (auto& v : b) v = normal(rng, 0, 0.1);
  const auto m = linear_classifier(1, 2, 3, w, b);
  AdversarialSet set;
  set.clean = random_images(50, 1, 2, 20);
  set.adversarial = random_images(50, 1, 2, 21);
  set.attack_tags.assign(50, "random");
  set.epsilons.assign(50, 1.0);
  const auto out = filter_fooling(m, set);
  for (std::size_t i = 0; i < 50; ++i) {
    auto label = [&](std::span<const double> x) {
      int best = 0;
      double top = -1e300;
      for (int k = 0; k < 3; ++k) {
        double z = b[k];
        for (int p = 0; p < 4; ++p) z += x[p] * w[p * 3 + k];
        if (z > top) top = z, best = k;
      }
      return best;
    };
    EXPECT_EQ((*out.fooled_mask)[i], label(set.clean.sample(i)) != label(set.adversarial.sample(i)));
  }
}

TEST(MixedAttackTest, PartitionCounts) {
  EXPECT_EQ(partition_counts(100, std::vector<double>{0.5, 0.5}), (std::vector<std::size_t>{50, 50}));
  EXPECT_EQ(partition_counts(10, std::vector<double>{0.2, 0.4, 0.4}), (std::vector<std::size_t>{2, 4, 4}));
  EXPECT_EQ(partition_counts(7, std::vector<double>{1.0}), (std::vector<std::size_t>{7}));
  const auto c = partition_counts(11, std::vector<double>{0.2, 0.4, 0.4});
  EXPECT_EQ(c[0] + c[1] + c[2], 11u);
  EXPECT_THROW(partition_counts(10, std::vector<double>{0.5, 0.4}), ConfigError);
}

TEST(MixedAttackTest, TagCountsFollowProportions) {
  const auto m = random_cnn(22);
  const auto x = random_images(10, 1, 8, 23);
  const std::vector<AttackConfig> cfgs = {AttackConfig::pgd(0.03, 0.01, 2, 1), AttackConfig::fgsm(0.02),
                                          AttackConfig::bim(0.03, 0.01, 2)};
  const auto set = build_mixed_attack_set(m, x, cfgs, {0.2, 0.4, 0.4}, 5);
  std::map<std::string, int> counts;
  for (const auto& t : set.attack_tags) ++counts[t];
  EXPECT_EQ(counts[cfgs[0].tag()], 2);
  EXPECT_EQ(counts[cfgs[1].tag()], 4);
  EXPECT_EQ(counts[cfgs[2].tag()], 4);
  for (std::size_t i = 0; i < set.size(); ++i)
    EXPECT_LE(linf_distance(set.adversarial.sample(i), x.sample(i)), set.epsilons[i] + 1e-7);

  const auto half = build_mixed_attack_set(m, random_images(100, 1, 8, 24), {cfgs[0], cfgs[1]}, {0.5, 0.5}, 5);
  std::map<std::string, int> hc;
  for (const auto& t : half.attack_tags) ++hc[t];
  EXPECT_EQ(hc[cfgs[0].tag()], 50);
  EXPECT_EQ(hc[cfgs[1].tag()], 50);
}

TEST(MixedAttackTest, SingleProportionEqualsSingleAttack) {
  const auto m = random_cnn(25);
  const auto x = random_images(9, 1, 8, 26);
  const auto cfg = AttackConfig::pgd(0.03, 0.01, 3, 8);
  const auto set = build_mixed_attack_set(m, x, {cfg}, {1.0}, 99);
  EXPECT_EQ(set.adversarial, run_attack(m, x, cfg));
}

TEST(MixedAttackTest, MismatchedListsRejected) {
  const auto m = random_cnn(27);
  EXPECT_THROW(build_mixed_attack_set(m, random_images(4, 1, 8, 1), {AttackConfig::fgsm(0.1)}, {0.5, 0.5}, 1),
               ConfigError);
}

TEST(MixedAttackTest, SeedReproducible) {
  const auto m = random_cnn(28);
  const auto x = random_images(20, 1, 8, 29);
  const std::vector<AttackConfig> cfgs = {AttackConfig::pgd(0.03, 0.01, 2, 1), AttackConfig::fgsm(0.02)};
  const auto a = build_mixed_attack_set(m, x, cfgs, {0.5, 0.5}, 3);
  const auto b = build_mixed_attack_set(m, x, cfgs, {0.5, 0.5}, 3);
  EXPECT_EQ(a.adversarial, b.adversarial);
  EXPECT_EQ(a.attack_tags, b.attack_tags);
}

TEST(PersistTest, RoundtripAndExternalSlot) {
  const auto dir = fs::temp_directory_path() / "dad_attack_persist";
  fs::remove_all(dir);
  const auto m = random_cnn(30);
  const auto x = random_images(7, 1, 8, 31);
  auto set = filter_fooling(m, make_adversarial_set(m, x, AttackConfig::pgd(0.05, 0.01, 3, 2)));
  save_adversarial_set(set, dir);
  const auto back = load_adversarial_set(dir);
  EXPECT_EQ(back.clean, set.clean);
  EXPECT_EQ(back.adversarial, set.adversarial);
  EXPECT_EQ(back.attack_tags, set.attack_tags);
  EXPECT_EQ(back.fooled_mask, set.fooled_mask);
  EXPECT_EQ(back.configs.size(), 1u);
  EXPECT_EQ(back.configs[0].tag(), set.configs[0].tag());

  // The external slot replays arrays produced elsewhere.
  const auto ext = run_attack(m, x, AttackConfig::external(dir / "adversarial.npy", 0.05));
  EXPECT_EQ(ext, set.adversarial);
  EXPECT_THROW(run_attack(m, x, AttackConfig::external(dir / "adversarial.npy", 0.01)), InputError);
  EXPECT_THROW(run_attack(m, x.slice(0, 3), AttackConfig::external(dir / "adversarial.npy", 0.05)), InputError);
}

TEST(AttackKindTest, ParseNames) {
  EXPECT_EQ(parse_attack_kind("ifgsm"), AttackKind::kBim);
  EXPECT_EQ(parse_attack_kind("pgd"), AttackKind::kPgd);
  EXPECT_THROW(parse_attack_kind("cw"), ConfigError);
}

}  // namespace
}  // namespace dad
