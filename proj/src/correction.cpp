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

#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "dad/error.hpp"
#include "dad/spectral.hpp"

namespace dad {

void CorrectionConfig::validate() const {
  if (count == 0) throw ConfigError("correction count must be at least 1");
  if (radius_step == 0 || radius_step % 2 != 0) throw ConfigError("radius_step must be a positive even integer");
  ssim.validate();
}

std::size_t label_change_rate(const Classifier& model, std::span<const double> image, int original_pred,
                              std::size_t count, Rng& rng) {
  if (!model.stochastic_capable()) throw CapabilityError("label change rate needs a stochastic-capable model");
  const std::size_t c = model.input_channels(), w = model.input_side();
  const ImageBatch one(1, c, w, std::vector<double>(image.begin(), image.end()));
  const auto labels = model.stochastic_labels(one, count, std::span<Rng>(&rng, 1));
  std::size_t lcr = 0;
  for (const auto& t : labels) lcr += t[0] != original_pred;
  return lcr;
}

double advcont_score(std::size_t lcr, std::size_t count) {
  if (count == 0 || lcr > count) throw InputError("lcr must lie in [0, count]");
  return double(count - lcr) / double(count);
}

double radius_floor(std::size_t side, double p_clean) {
  if (!(p_clean >= 0.0 && p_clean <= 1.0)) throw InputError("clean probability must lie in [0, 1]");
  return std::floor(double(side) * p_clean);
}

std::vector<double> sweep_radii(std::size_t side, std::size_t step) {
  std::vector<double> radii;
  for (std::size_t r = step; 2 * r <= side; r += step) radii.push_back(double(r));
  return radii;
}

std::uint64_t image_seed(std::span<const double> image, std::uint64_t base) {
  std::uint64_t h = splitmix64(base ^ image.size());
  for (double v : image) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

std::size_t forward_budget(std::size_t side, const CorrectionConfig& cfg) {
  return sweep_radii(side, cfg.radius_step).size() * (cfg.count + 1) + 1;
}

namespace {

// Restores the previous stochastic mode on scope exit.
class StochasticScope {
 public:
  explicit StochasticScope(Classifier& model) : model_(model), previous_(model.stochastic_mode()) {
    if (!model.stochastic_capable()) throw CapabilityError("correction needs a stochastic-capable model");
  }
  ~StochasticScope() {
    if (model_.stochastic_mode() != previous_) model_.set_stochastic_mode(previous_);
  }
  void set(bool on) {
    if (model_.stochastic_mode() != on) model_.set_stochastic_mode(on);
  }

 private:
  Classifier& model_;
  bool previous_;
};

class Stopwatch {
 public:
  explicit Stopwatch(bool running = true) : running_(running), start_(Clock::now()) {}
  void pause() {
    if (running_) total_ += Clock::now() - start_;
    running_ = false;
  }
  void resume() {
    if (!running_) start_ = Clock::now();
    running_ = true;
  }
  double seconds() const { return std::chrono::duration<double>(total_).count(); }

 private:
  using Clock = std::chrono::steady_clock;
  bool running_;
  Clock::time_point start_;
  Clock::duration total_{};
};

struct SampleState {
  Spectrum spectrum;
  Rng rng;
  bool sweeping = true;
};

}  // namespace

CorrectedBatch correct_batch(Classifier& model, const ImageBatch& batch, std::span<const double> p_clean,
                             const CorrectionConfig& cfg, CorrectionTiming* timing) {
  cfg.validate();
  if (p_clean.size() != batch.size()) throw InputError("one clean probability per sample is required");
  const std::size_t n = batch.size(), c = batch.channels(), w = batch.side();
  StochasticScope scope(model);
  scope.set(false);

  CorrectedBatch out;
  out.results.resize(n);
  if (n == 0) {
    out.images = batch;
    return out;
  }
  Stopwatch sweep_clock;
  const auto preds = predict_labels(model, batch);
  const auto radii = sweep_radii(w, cfg.radius_step);

  Stopwatch filter_clock(false);
  std::vector<SampleState> state(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& res = out.results[i];
    res.p_clean = p_clean[i];
    res.prediction = preds[i];
    res.r_min = radius_floor(w, p_clean[i]);
    // r_prime cannot exceed w/2, so a floor at or above it fixes r_star.
    res.sweep_skipped = res.r_min >= double(w) / 2.0;
    state[i].sweeping = !res.sweep_skipped;
    filter_clock.resume();
    state[i].spectrum = fft2(batch.sample(i), c, w);
    filter_clock.pause();
    state[i].rng.seed(image_seed(batch.sample(i), cfg.seed));
  }

  scope.set(true);
  for (double r : radii) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n; ++i)
      if (state[i].sweeping) active.push_back(i);
    if (active.empty()) break;

    ImageBatch low(active.size(), c, w);
    std::vector<Rng> rngs;
    rngs.reserve(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      const auto lp = low_pass_from(state[i].spectrum, batch.sample(i), r);
      std::copy(lp.begin(), lp.end(), low.sample(k).begin());
      rngs.push_back(state[i].rng);
    }
    const auto trials = model.stochastic_labels(low, cfg.count, rngs);
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      state[i].rng = rngs[k];
      std::size_t lcr = 0;
      for (const auto& t : trials) lcr += t[k] != preds[i];
      RadiusScore s;
      s.radius = r;
      s.disc = disc_score(batch.sample(i), low.sample(k), c, w, cfg.ssim);
      s.advcont = advcont_score(lcr, cfg.count);
      s.lcr = lcr;
      auto& res = out.results[i];
      res.per_radius.push_back(s);
      if (s.disc - s.advcont > 0) {
        res.r_prime = r;
      } else {
        state[i].sweeping = false;
      }
    }
  }
  scope.set(false);

  filter_clock.resume();
  out.images = ImageBatch(n, c, w);
  const double full = identity_radius(w);
  for (std::size_t i = 0; i < n; ++i) {
    auto& res = out.results[i];
    res.r_star = std::max(res.r_min, res.r_prime);
    res.pass_through = res.r_star >= full;
    const auto img = low_pass_from(state[i].spectrum, batch.sample(i), res.r_star);
    std::copy(img.begin(), img.end(), out.images.sample(i).begin());
  }
  filter_clock.pause();
  sweep_clock.pause();
  if (timing) {
    timing->filter_seconds = filter_clock.seconds();
    timing->sweep_seconds = sweep_clock.seconds() - timing->filter_seconds;
  }
  return out;
}

CorrectionResult best_radius(Classifier& model, std::span<const double> image, double p_clean,
                             const CorrectionConfig& cfg) {
  const std::size_t c = model.input_channels(), w = model.input_side();
  const ImageBatch one(1, c, w, std::vector<double>(image.begin(), image.end()));
  const double p[] = {p_clean};
  return std::move(correct_batch(model, one, p, cfg).results[0]);
}

CorrectionResult correct(Classifier& model, std::span<const double> image, double p_clean,
                         const CorrectionConfig& cfg) {
  const std::size_t c = model.input_channels(), w = model.input_side();
  const ImageBatch one(1, c, w, std::vector<double>(image.begin(), image.end()));
  const double p[] = {p_clean};
  auto out = correct_batch(model, one, p, cfg);
  auto res = std::move(out.results[0]);
  res.corrected = std::move(out.images.values());
  return res;
}

void write_trace(std::ostream& out, std::span<const CorrectionResult> results) {
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    nlohmann::json radii = nlohmann::json::array();
    for (const auto& s : r.per_radius)
      radii.push_back({{"r", s.radius}, {"disc", s.disc}, {"advcont", s.advcont}, {"lcr", s.lcr}});
    const nlohmann::json line = {{"index", i},
                                 {"p_clean", r.p_clean},
                                 {"pred", r.prediction},
                                 {"r_min", r.r_min},
                                 {"r_prime", r.r_prime},
                                 {"r_star", r.r_star},
                                 {"skipped", r.sweep_skipped},
                                 {"pass_through", r.pass_through},
                                 {"per_radius", radii}};
    out << line.dump() << '\n';
  }
}

void write_trace(const std::filesystem::path& path, std::span<const CorrectionResult> results) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace " + path.string());
  write_trace(out, results);
}

}  // namespace dad
