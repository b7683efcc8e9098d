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

#include "dad/correction.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <memory>
#include <sstream>

#include "json.hpp"

#include "dad/attacks.hpp"
#include "dad/error.hpp"
#include "dad/perceptual.hpp"
#include "dad/spectral.hpp"
#include "desk_fixture.hpp"
#include "test_support.hpp"

namespace dad {
namespace {

using dad::testing::random_images;
using dad::testing::StubClassifier;

Logits constant_logits(std::size_t n, std::size_t classes, int label) {
  Logits z(n, classes, 0.0);
  for (std::size_t i = 0; i < n; ++i) z(i, static_cast<std::size_t>(label)) = 1.0;
  return z;
}

// Deterministic forwards predict class 0; the k-th stochastic forward predicts
// script(k).
std::shared_ptr<StubClassifier> scripted_stub(std::size_t side, std::function<int(std::size_t)> script) {
  auto calls = std::make_shared<std::size_t>(0);
  return std::make_shared<StubClassifier>(
      3, side, 1, true, [calls, script](const ImageBatch& b, bool stochastic, std::span<Rng>) {
        return constant_logits(b.size(), 3, stochastic ? script((*calls)++) : 0);
      });
}

TEST(CorrectionConfigTest, Validation) {
  CorrectionConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.count = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.count = 10;
  cfg.radius_step = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(AdvcontTest, Formula) {
  EXPECT_EQ(advcont_score(0, 10), 1.0);
  EXPECT_EQ(advcont_score(10, 10), 0.0);
  EXPECT_DOUBLE_EQ(advcont_score(3, 10), 0.7);
  EXPECT_THROW(advcont_score(11, 10), InputError);
}

TEST(RadiusFloorTest, FloorsWidthTimesScore) {
  EXPECT_EQ(radius_floor(32, 0.9), 28.0);
  EXPECT_EQ(radius_floor(32, 0.1), 3.0);
  EXPECT_EQ(radius_floor(28, 1.0), 28.0);
  EXPECT_EQ(radius_floor(28, 0.0), 0.0);
  EXPECT_THROW(radius_floor(28, 1.5), InputError);
}

TEST(SweepRadiiTest, EvenStepsUpToHalfWidth) {
  EXPECT_EQ(sweep_radii(28, 2), (std::vector<double>{2, 4, 6, 8, 10, 12, 14}));
  EXPECT_EQ(sweep_radii(32, 2).back(), 16.0);
  EXPECT_EQ(sweep_radii(15, 2), (std::vector<double>{2, 4, 6}));
  EXPECT_EQ(sweep_radii(28, 4), (std::vector<double>{4, 8, 12}));
}

TEST(LabelChangeRateTest, ScriptedTrials) {
  auto stub = scripted_stub(8, [](std::size_t k) { return k == 2 || k == 5 ? 1 : 0; });
  stub->set_stochastic_mode(true);
  Rng rng(1);
  const auto img = random_images(1, 1, 8, 1);
  EXPECT_EQ(label_change_rate(*stub, img.sample(0), 0, 10, rng), 2u);
}

TEST(LabelChangeRateTest, ZeroDropoutIsAllOrNothing) {
  const std::size_t d = 16;
  auto m = dad::testing::linear_classifier(1, 4, 2, std::vector<double>(2 * d, 0.0), {0.0, 0.0}, 1e-300);
  ASSERT_TRUE(m.stochastic_capable());
  m.set_stochastic_mode(true);
  const auto img = random_images(1, 1, 4, 2);
  Rng rng(2);
  EXPECT_EQ(label_change_rate(m, img.sample(0), 0, 10, rng), 0u);
  EXPECT_EQ(label_change_rate(m, img.sample(0), 1, 10, rng), 10u);
}

TEST(LabelChangeRateTest, NeedsStochasticModel) {
  auto m = dad::testing::linear_classifier(1, 2, 2, std::vector<double>(8, 0.1), {0.0, 0.0});
  Rng rng(3);
  const auto img = random_images(1, 1, 2, 3);
  EXPECT_THROW(label_change_rate(m, img.sample(0), 0, 10, rng), CapabilityError);
  Classifier& base = m;
  EXPECT_THROW(correct(base, img.sample(0), 0.5), CapabilityError);
}

TEST(BestRadiusTest, ScriptedSweepStopsAtFirstFailure) {
  const std::size_t count = 10;
  // Radius index k / count: predictions flip at r = 2, 4 and hold at r = 6.
  auto stub = scripted_stub(16, [count](std::size_t k) { return k / count < 2 ? 1 : 0; });
  const auto img = random_images(1, 1, 16, 4);
  const auto res = best_radius(*stub, img.sample(0), 0.0);
  EXPECT_EQ(res.r_prime, 4.0);
  EXPECT_EQ(res.r_star, 4.0);
  ASSERT_EQ(res.per_radius.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    const double r = 2.0 * double(k + 1);
    EXPECT_EQ(res.per_radius[k].radius, r);
    EXPECT_EQ(res.per_radius[k].lcr, k < 2 ? count : 0u);
    const auto lp = low_pass(img.sample(0), 1, 16, r);
    EXPECT_NEAR(res.per_radius[k].disc, (ssim(img.sample(0), lp, 1, 16) + 1.0) / 2.0, 1e-12);
  }
  EXPECT_FALSE(stub->stochastic_mode());
}

TEST(BestRadiusTest, FloorWinsOverSweep) {
  auto stub = scripted_stub(16, [](std::size_t k) { return k < 10 ? 1 : 0; });
  const auto img = random_images(1, 1, 16, 5);
  const auto res = best_radius(*stub, img.sample(0), 0.4);
  EXPECT_EQ(res.r_min, 6.0);
  EXPECT_EQ(res.r_prime, 2.0);
  EXPECT_EQ(res.r_star, 6.0);
}

TEST(CorrectTest, ImmediateFailureGivesChannelMeans) {
  auto stub = scripted_stub(8, [](std::size_t) { return 0; });
  const auto img = random_images(1, 1, 8, 6);
  const auto res = correct(*stub, img.sample(0), 0.0);
  EXPECT_EQ(res.r_prime, 0.0);
  EXPECT_EQ(res.r_star, 0.0);
  double mean = 0;
  for (double v : img.sample(0)) mean += v;
  mean /= 64;
  for (double v : res.corrected) EXPECT_NEAR(v, mean, 1e-12);
}

TEST(CorrectTest, ConfidentCleanPassesThrough) {
  auto& desk = dad::testing::desk_digits_model();
  NetworkClassifier m(desk);
  const auto data = dad::testing::desk_digits_holdout(5);
  const auto before = m.call_count();
  const auto res = correct(m, data.images.sample(0), 1.0);
  EXPECT_TRUE(res.sweep_skipped);
  EXPECT_TRUE(res.per_radius.empty());
  EXPECT_EQ(res.r_star, 28.0);
  EXPECT_TRUE(res.pass_through);
  EXPECT_TRUE(std::equal(res.corrected.begin(), res.corrected.end(), data.images.sample(0).begin()));
  EXPECT_EQ(m.call_count() - before, 1u);
  const ImageBatch corrected(1, 1, 28, res.corrected);
  EXPECT_EQ(predict_labels(m, corrected)[0], res.prediction);
}

TEST(CorrectTest, ForwardBudgetRespected) {
  auto stub = scripted_stub(28, [](std::size_t) { return 1; });  // never stops early
  const auto img = random_images(1, 1, 28, 7);
  CorrectionConfig cfg;
  EXPECT_EQ(forward_budget(28, cfg), 7u * 11u + 1u);
  const auto before = stub->call_count();
  const auto res = correct(*stub, img.sample(0), 0.0, cfg);
  EXPECT_EQ(res.per_radius.size(), 7u);
  EXPECT_LE(stub->call_count() - before, forward_budget(28, cfg));
}

class DeskCorrectionTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = std::make_unique<NetworkClassifier>(dad::testing::desk_digits_model());
    images_ = dad::testing::desk_digits_holdout(8).images;
  }
  std::unique_ptr<NetworkClassifier> model_;
  ImageBatch images_;
};

TEST_F(DeskCorrectionTest, BatchMatchesSingle) {
  const std::vector<double> p = {0.0, 0.1, 0.3, 0.45, 0.5, 0.05, 0.9, 0.2};
  const auto batch = correct_batch(*model_, images_, p);
  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto single = correct(*model_, images_.sample(i), p[i]);
    EXPECT_EQ(single.r_star, batch.results[i].r_star) << i;
    ASSERT_EQ(single.per_radius.size(), batch.results[i].per_radius.size());
    for (std::size_t k = 0; k < single.per_radius.size(); ++k) {
      EXPECT_EQ(single.per_radius[k].lcr, batch.results[i].per_radius[k].lcr);
      EXPECT_EQ(single.per_radius[k].disc, batch.results[i].per_radius[k].disc);
    }
    EXPECT_TRUE(std::equal(single.corrected.begin(), single.corrected.end(), batch.images.sample(i).begin()));
  }
}

TEST_F(DeskCorrectionTest, PermutationPermutesOutputs) {
  const std::vector<double> p = {0.0, 0.1, 0.3, 0.45, 0.5, 0.05, 0.9, 0.2};
  const std::vector<std::size_t> perm = {3, 7, 0, 5, 1, 6, 2, 4};
  std::vector<double> pp(8);
  for (std::size_t k = 0; k < 8; ++k) pp[k] = p[perm[k]];
  const auto a = correct_batch(*model_, images_, p);
  const auto b = correct_batch(*model_, images_.select(perm), pp);
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(b.results[k].r_star, a.results[perm[k]].r_star);
    EXPECT_TRUE(std::equal(b.images.sample(k).begin(), b.images.sample(k).end(),
                           a.images.sample(perm[k]).begin()));
  }
}

TEST_F(DeskCorrectionTest, DeterministicAndConsistent) {
  std::vector<double> p(8, 0.0);
  const auto a = correct_batch(*model_, images_, p);
  const auto b = correct_batch(*model_, images_, p);
  EXPECT_EQ(a.images, b.images);
  for (const auto& r : a.results) {
    EXPECT_EQ(r.r_star, std::max(r.r_min, r.r_prime));
    for (const auto& s : r.per_radius) EXPECT_EQ(s.advcont, double(10 - s.lcr) / 10.0);
  }
  CorrectionConfig other;
  other.seed = 99;
  std::size_t differ = 0;
  const auto c = correct_batch(*model_, images_, p, other);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t k = 0; k < std::min(a.results[i].per_radius.size(), c.results[i].per_radius.size()); ++k)
      differ += a.results[i].per_radius[k].lcr != c.results[i].per_radius[k].lcr;
  EXPECT_GT(differ, 0u);
}

TEST_F(DeskCorrectionTest, MonotoneFloor) {
  for (std::size_t i = 0; i < 4; ++i) {
    double prev = -1;
    for (double p : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0}) {
      const auto r = best_radius(*model_, images_.sample(i), p);
      EXPECT_GE(r.r_star, prev);
      prev = r.r_star;
    }
  }
}

TEST_F(DeskCorrectionTest, StochasticModeRestored) {
  model_->set_stochastic_mode(true);
  std::vector<double> p(8, 0.2);
  correct_batch(*model_, images_, p);
  EXPECT_TRUE(model_->stochastic_mode());
  model_->set_stochastic_mode(false);
  correct_batch(*model_, images_, p);
  EXPECT_FALSE(model_->stochastic_mode());
}

TEST_F(DeskCorrectionTest, TraceLines) {
  std::vector<double> p(3, 0.1);
  const auto out = correct_batch(*model_, images_.slice(0, 3), p);
  std::ostringstream os;
  write_trace(os, out.results);
  std::istringstream is(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("index").get<std::size_t>(), n);
    EXPECT_EQ(j.at("r_star").get<double>(), out.results[n].r_star);
    EXPECT_EQ(j.at("per_radius").size(), out.results[n].per_radius.size());
    for (const char* key : {"r_min", "r_prime", "pred", "skipped", "p_clean"}) EXPECT_TRUE(j.contains(key));
    ++n;
  }
  EXPECT_EQ(n, 3u);
}

TEST(DeskCorrectionAccuracyTest, CorrectionRecoversPgdPredictions) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto data = dad::testing::desk_digits_holdout(300);
  // Budget at which PGD fools nearly every desk sample.
  const auto adv = run_attack(m, data.images, AttackConfig::pgd(0.3, 0.3 / 8, 20, 11));
  const double undefended = accuracy(predict_labels(m, adv), data.labels);
  const std::vector<double> p(adv.size(), 0.0);
  const auto out = correct_batch(m, adv, p);
  const double corrected = accuracy(predict_labels(m, out.images), data.labels);
  std::printf("undefended %.4f corrected %.4f\n", undefended, corrected);
  EXPECT_GT(corrected, undefended);
}

TEST(DeskCorrectionAccuracyTest, RuntimeScalesLinearly) {
  NetworkClassifier m(dad::testing::desk_digits_model());
  const auto data = dad::testing::desk_digits_holdout(800);
  auto time_of = [&](std::size_t n) {
    const auto imgs = data.images.slice(0, n);
    const std::vector<double> p(n, 0.0);
    const auto t0 = std::chrono::steady_clock::now();
    correct_batch(m, imgs, p);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const double t200 = time_of(200);
  const double t800 = time_of(800);
  std::printf("200: %.2fs 800: %.2fs\n", t200, t800);
  EXPECT_LE(t800 / t200, 5.0);
}

}  // namespace
}  // namespace dad
