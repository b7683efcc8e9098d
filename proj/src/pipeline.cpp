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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "dad/error.hpp"
#include "dad/image_io.hpp"
#include "dad/spectral.hpp"

namespace dad {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double percent(std::size_t hits, std::size_t n) { return n == 0 ? kNaN : 100.0 * double(hits) / double(n); }

// Deterministic classification regardless of the caller's mode.
std::vector<int> deterministic_labels(Classifier& model, const ImageBatch& batch) {
  const bool was = model.stochastic_mode();
  if (was) model.set_stochastic_mode(false);
  auto labels = predict_labels(model, batch);
  if (was) model.set_stochastic_mode(true);
  return labels;
}

DefenseOutput run_defense(Classifier& model, const ImageBatch& batch, std::vector<double> scores,
                          const DefenseOptions& opts) {
  DefenseOutput out;
  if (opts.mode == DefenseMode::kRandomRadius) {
    const auto t0 = std::chrono::steady_clock::now();
    auto rr = random_radius_baseline(model, batch, opts.seed, opts.correction.radius_step);
    out.radii = std::move(rr.radii);
    out.corrected = ImageBatch(batch.size(), batch.channels(), batch.side());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto img = low_pass(batch.sample(i), batch.channels(), batch.side(), out.radii[i]);
      std::copy(img.begin(), img.end(), out.corrected.sample(i).begin());
    }
    out.times.correct = seconds_since(t0);
  } else {
    if (opts.mode == DefenseMode::kCorrectionOnly) scores.assign(batch.size(), 0.0);
    if (opts.mode == DefenseMode::kHard) scores = harden(scores);
    CorrectionTiming ct;
    auto cb = correct_batch(model, batch, scores, opts.correction, &ct);
    out.times.sweep = ct.sweep_seconds;
    out.times.correct = ct.filter_seconds;
    out.corrected = std::move(cb.images);
    out.traces = std::move(cb.results);
    for (const auto& r : out.traces) out.radii.push_back(r.r_star);
    out.p_clean = std::move(scores);
  }
  const auto t1 = std::chrono::steady_clock::now();
  out.predictions = deterministic_labels(model, out.corrected);
  out.times.classify = seconds_since(t1);
  return out;
}

bool needs_detector(DefenseMode m) { return m == DefenseMode::kSoft || m == DefenseMode::kHard; }

}  // namespace

CleanScorer detector_scorer(const TargetDetector& detector) {
  return [&detector](const ImageBatch& b) { return detector.clean_probability(b); };
}

CleanScorer constant_scorer(double p_clean) {
  return [p_clean](const ImageBatch& b) { return std::vector<double>(b.size(), p_clean); };
}

std::vector<double> harden(std::span<const double> p_clean) {
  std::vector<double> out(p_clean.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p_clean[i] >= 0.5 ? 1.0 : 0.0;
  return out;
}

StageTimes& StageTimes::operator+=(const StageTimes& o) {
  detect += o.detect;
  sweep += o.sweep;
  correct += o.correct;
  classify += o.classify;
  total += o.total;
  return *this;
}

DefenseOutput defend(Classifier& model, const CleanScorer& detector, const ImageBatch& batch,
                     const DefenseOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> scores;
  double detect = 0;
  if (needs_detector(opts.mode)) {
    if (!detector) throw StateError("soft and hard defense need a detector");
    scores = detector(batch);
    if (scores.size() != batch.size()) throw StateError("detector returned the wrong number of scores");
    detect = seconds_since(t0);
  }
  auto out = run_defense(model, batch, std::move(scores), opts);
  out.times.detect = detect;
  out.times.total = seconds_since(t0);
  return out;
}

RandomRadiusOutput random_radius_baseline(const Classifier& model, const ImageBatch& batch, std::uint64_t seed,
                                          std::size_t radius_step) {
  const auto radii = sweep_radii(batch.side(), radius_step);
  if (radii.empty()) throw InputError("image too small for the radius sweep");
  RandomRadiusOutput out;
  Rng rng(seed);
  ImageBatch filtered(batch.size(), batch.channels(), batch.side());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double r = radii[uniform_index(rng, radii.size())];
    out.radii.push_back(r);
    const auto img = low_pass(batch.sample(i), batch.channels(), batch.side(), r);
    std::copy(img.begin(), img.end(), filtered.sample(i).begin());
  }
  out.predictions = predict_labels(model, filtered);
  return out;
}

EvalSet build_eval_set(const LabeledImages& clean, const AdversarialSet& adv, std::span<const int> adv_labels,
                       std::size_t ratio_clean, std::size_t ratio_adv, std::uint64_t seed) {
  if (ratio_clean == 0 || ratio_adv == 0) throw ConfigError("clean:adv ratio parts must be positive");
  if (adv_labels.size() != adv.size()) throw InputError("one label per adversarial sample is required");
  const std::size_t k = std::min(clean.size() / ratio_clean, adv.size() / ratio_adv);
  if (k == 0) throw InputError("not enough samples for the requested clean:adv ratio");

  auto pick = [](std::size_t n, std::size_t m, std::uint64_t s) {
    Rng rng(s);
    auto idx = permutation(n, rng);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
  };
  const auto ci = pick(clean.size(), k * ratio_clean, derive_seed(seed, 0));
  const auto ai = pick(adv.size(), k * ratio_adv, derive_seed(seed, 1));

  EvalSet set;
  const auto c = clean.select(ci);
  set.clean = c.images;
  set.clean_labels = c.labels;
  const auto a = adv.select(ai);
  set.adversarial = a.adversarial;
  set.adversarial_origin = a.clean;
  set.attack_tags = a.attack_tags;
  for (std::size_t i : ai) set.adversarial_labels.push_back(adv_labels[i]);
  const std::set<std::string> tags(a.attack_tags.begin(), a.attack_tags.end());
  set.provenance = {{"ratio", {ratio_clean, ratio_adv}},
                    {"seed", seed},
                    {"clean_source", clean.id},
                    {"clean_indices", ci},
                    {"adversarial_indices", ai},
                    {"attacks", std::vector<std::string>(tags.begin(), tags.end())}};
  return set;
}

std::vector<bool> strict_adversarial_mask(const Classifier& model, const EvalSet& set) {
  const auto origin = predict_labels(model, set.adversarial_origin);
  const auto adv = predict_labels(model, set.adversarial);
  std::vector<bool> mask(adv.size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = origin[i] == set.adversarial_labels[i] && adv[i] != set.adversarial_labels[i];
  return mask;
}

DefenseReport evaluate(Classifier& model, const CleanScorer& detector, const EvalSet& set,
                       const EvaluateOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  if (set.clean_labels.size() != set.clean.size() || set.adversarial_labels.size() != set.adversarial.size() ||
      set.adversarial_origin.size() != set.adversarial.size())
    throw InputError("evaluation labels do not match the sample counts");
  if (opts.random_trials == 0) throw ConfigError("random_trials must be positive");
  const auto& dopt = opts.defense;

  const auto base_clean = deterministic_labels(model, set.clean);
  const auto base_adv = deterministic_labels(model, set.adversarial);
  const auto strict = strict_adversarial_mask(model, set);

  std::vector<double> p_clean_clean, p_clean_adv;
  StageTimes detect_times;
  if (detector) {
    auto td = std::chrono::steady_clock::now();
    p_clean_clean = detector(set.clean);
    p_clean_adv = detector(set.adversarial);
    detect_times.detect = seconds_since(td);
  } else if (needs_detector(dopt.mode)) {
    throw StateError("soft and hard defense need a detector");
  }

  DefenseOptions co_opts = dopt;
  co_opts.mode = DefenseMode::kCorrectionOnly;
  const auto co = run_defense(model, set.adversarial, {}, co_opts);
  const auto cb_clean = run_defense(model, set.clean, p_clean_clean, dopt);
  const auto cb_adv = run_defense(model, set.adversarial, p_clean_adv, dopt);

  std::vector<std::vector<int>> random_preds;
  for (std::size_t t = 0; t < opts.random_trials; ++t)
    random_preds.push_back(
        random_radius_baseline(model, set.adversarial, derive_seed(dopt.seed, 100 + t), dopt.correction.radius_step)
            .predictions);

  auto view = [&](std::string name, bool strict_only) {
    ViewMetrics v;
    v.name = std::move(name);
    v.clean_count = set.clean.size();
    std::size_t td_c = 0, cb_c = 0, base_c = 0;
    for (std::size_t i = 0; i < set.clean.size(); ++i) {
      const int y = set.clean_labels[i];
      if (detector) td_c += p_clean_clean[i] >= 0.5;
      cb_c += cb_clean.predictions[i] == y;
      base_c += base_clean[i] == y;
    }
    std::size_t n = 0, td_a = 0, co_hits = 0, cb_a = 0, base_a = 0;
    std::vector<std::size_t> rand_hits(random_preds.size(), 0);
    for (std::size_t i = 0; i < set.adversarial.size(); ++i) {
      if (strict_only && !strict[i]) continue;
      const int y = set.adversarial_labels[i];
      ++n;
      if (detector) td_a += p_clean_adv[i] < 0.5;
      co_hits += co.predictions[i] == y;
      cb_a += cb_adv.predictions[i] == y;
      base_a += base_adv[i] == y;
      for (std::size_t t = 0; t < random_preds.size(); ++t) rand_hits[t] += random_preds[t][i] == y;
    }
    v.adv_count = n;
    v.td_clean = detector ? percent(td_c, v.clean_count) : kNaN;
    v.td_adv = detector ? percent(td_a, n) : kNaN;
    v.co_a = percent(co_hits, n);
    v.cb_clean = percent(cb_c, v.clean_count);
    v.cb_adv = percent(cb_a, n);
    v.baseline_clean = percent(base_c, v.clean_count);
    v.baseline_adv = percent(base_a, n);
    double sum = 0;
    for (std::size_t h : rand_hits) {
      v.random_co_a_trials.push_back(percent(h, n));
      sum += v.random_co_a_trials.back();
    }
    v.random_co_a = sum / double(rand_hits.size());
    return v;
  };

  DefenseReport r;
  r.mode = dopt.mode;
  r.all = view("all-perturbed", false);
  r.strict = view("fooled-only", true);
  r.stages = detect_times;
  StageTimes cb_times = cb_clean.times;
  cb_times += cb_adv.times;
  r.stages.sweep = cb_times.sweep;
  r.stages.correct = cb_times.correct;
  r.stages.classify = cb_times.classify;
  r.stages.total = r.stages.detect + r.stages.sweep + r.stages.correct + r.stages.classify;

  if (opts.radius_curve) {
    for (double rad : sweep_radii(set.clean.side(), dopt.correction.radius_step)) {
      RadiusAccuracy ra;
      ra.radius = rad;
      ra.clean = 100.0 * accuracy(deterministic_labels(model, low_pass(set.clean, rad)), set.clean_labels);
      ra.adv = 100.0 * accuracy(deterministic_labels(model, low_pass(set.adversarial, rad)), set.adversarial_labels);
      r.radius_curve.push_back(ra);
    }
  }
  r.config = {{"mode", to_string(dopt.mode)},
              {"correction", to_json(dopt.correction)},
              {"seed", dopt.seed},
              {"random_trials", opts.random_trials},
              {"provenance", set.provenance}};
  r.runtime_seconds = seconds_since(t0);
  return r;
}

BenchRecord bench_runtime(Classifier& model, const CleanScorer& detector, const ImageBatch& pool, std::size_t n,
                          const DefenseOptions& opts) {
  BenchRecord rec;
  rec.samples = n;
  if (n == 0) return rec;
  if (pool.empty()) throw InputError("bench needs at least one sample");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i % pool.size();
  const auto batch = pool.select(idx);
  rec.times = defend(model, detector, batch, opts).times;
  return rec;
}

json to_json(const StageTimes& t) {
  return {{"detect", t.detect}, {"sweep", t.sweep}, {"correct", t.correct}, {"classify", t.classify},
          {"total", t.total}};
}

namespace {

json view_json(const ViewMetrics& v) {
  return {{"name", v.name},
          {"clean_count", v.clean_count},
          {"adv_count", v.adv_count},
          {"td_clean", v.td_clean},
          {"td_adv", v.td_adv},
          {"co_a", v.co_a},
          {"cb_clean", v.cb_clean},
          {"cb_adv", v.cb_adv},
          {"baseline_clean", v.baseline_clean},
          {"baseline_adv", v.baseline_adv},
          {"random_co_a", v.random_co_a},
          {"random_co_a_trials", v.random_co_a_trials}};
}

// NaN is written as null.
double number(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

ViewMetrics view_from_json(const json& j) {
  ViewMetrics v;
  v.name = j.at("name").get<std::string>();
  v.clean_count = j.at("clean_count").get<std::size_t>();
  v.adv_count = j.at("adv_count").get<std::size_t>();
  v.td_clean = number(j.at("td_clean"));
  v.td_adv = number(j.at("td_adv"));
  v.co_a = number(j.at("co_a"));
  v.cb_clean = number(j.at("cb_clean"));
  v.cb_adv = number(j.at("cb_adv"));
  v.baseline_clean = number(j.at("baseline_clean"));
  v.baseline_adv = number(j.at("baseline_adv"));
  v.random_co_a = number(j.at("random_co_a"));
  for (const auto& t : j.at("random_co_a_trials")) v.random_co_a_trials.push_back(number(t));
  return v;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Minimal line chart: accuracy (0..100) against radius, clean in blue, adv in red.
void plot_radius_curve(const std::vector<RadiusAccuracy>& curve, const std::filesystem::path& path) {
  const std::size_t W = 480, H = 320, left = 40, bottom = 30, top = 10, right = 10;
  RawImage img{3, H, W, std::vector<double>(3 * W * H, 1.0)};
  auto put = [&](long x, long y, double r, double g, double b) {
    for (long dy = -1; dy <= 1; ++dy)
      for (long dx = -1; dx <= 1; ++dx) {
        const long px = x + dx, py = y + dy;
        if (px < 0 || py < 0 || px >= long(W) || py >= long(H)) continue;
        img.data[0 * W * H + py * W + px] = r;
        img.data[1 * W * H + py * W + px] = g;
        img.data[2 * W * H + py * W + px] = b;
      }
  };
  const double rmax = curve.empty() ? 1.0 : curve.back().radius;
  auto to_px = [&](double radius, double acc) {
    const double x = double(left) + radius / rmax * double(W - left - right);
    const double y = double(H - bottom) - acc / 100.0 * double(H - bottom - top);
    return std::pair<long, long>(std::lround(x), std::lround(y));
  };
  for (std::size_t x = left; x < W - right; ++x) put(long(x), long(H - bottom), 0, 0, 0);
  for (std::size_t y = top; y <= H - bottom; ++y) put(long(left), long(y), 0, 0, 0);
  auto line = [&](auto pick, double r, double g, double b) {
    for (std::size_t k = 0; k + 1 < curve.size(); ++k) {
      const auto [x0, y0] = to_px(curve[k].radius, pick(curve[k]));
      const auto [x1, y1] = to_px(curve[k + 1].radius, pick(curve[k + 1]));
      const long steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
      for (long s = 0; s <= steps; ++s)
        put(x0 + (x1 - x0) * s / steps, y0 + (y1 - y0) * s / steps, r, g, b);
    }
  };
  line([](const RadiusAccuracy& a) { return a.clean; }, 0.1, 0.3, 0.9);
  line([](const RadiusAccuracy& a) { return a.adv; }, 0.9, 0.1, 0.1);
  write_png(path, img);
}

}  // namespace

json to_json(const DefenseReport& r) {
  json curve = json::array();
  for (const auto& c : r.radius_curve) curve.push_back({{"radius", c.radius}, {"clean", c.clean}, {"adv", c.adv}});
  return {{"mode", to_string(r.mode)},
          {"views", {view_json(r.all), view_json(r.strict)}},
          {"runtime_seconds", r.runtime_seconds},
          {"stages", to_json(r.stages)},
          {"radius_curve", curve},
          {"config", r.config}};
}

DefenseReport report_from_json(const json& j) {
  try {
    DefenseReport r;
    r.mode = parse_defense_mode(j.at("mode").get<std::string>());
    r.all = view_from_json(j.at("views").at(0));
    r.strict = view_from_json(j.at("views").at(1));
    r.runtime_seconds = j.at("runtime_seconds").get<double>();
    const auto& s = j.at("stages");
    r.stages = {s.at("detect").get<double>(), s.at("sweep").get<double>(), s.at("correct").get<double>(),
                s.at("classify").get<double>(), s.at("total").get<double>()};
    for (const auto& c : j.at("radius_curve"))
      r.radius_curve.push_back({c.at("radius").get<double>(), number(c.at("clean")), number(c.at("adv"))});
    r.config = j.at("config");
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed report: ") + e.what());
  }
}

const std::vector<std::string> kReportColumns = {"TD.A-clean", "TD.A-adv",       "Co.A",       "Cb.A-clean",
                                                 "Cb.A-adv",   "baseline-clean", "baseline-adv"};

void emit_report(const DefenseReport& report, const std::filesystem::path& dir, bool plots) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw IoError("cannot write " + (dir / "report.json").string());
    out << to_json(report).dump(2) << '\n';
  }
  {
    std::ofstream out(dir / "report.csv");
    if (!out) throw IoError("cannot write " + (dir / "report.csv").string());
    out << "mode,view";
    for (const auto& c : kReportColumns) out << ',' << c;
    out << ",random-Co.A,clean-count,adv-count\n";
    for (const auto* v : {&report.all, &report.strict}) {
      out << to_string(report.mode) << ',' << v->name;
      for (double x : {v->td_clean, v->td_adv, v->co_a, v->cb_clean, v->cb_adv, v->baseline_clean, v->baseline_adv,
                       v->random_co_a})
        out << ',' << csv_number(x);
      out << ',' << v->clean_count << ',' << v->adv_count << '\n';
    }
  }
  if (plots && !report.radius_curve.empty()) {
    std::filesystem::create_directories(dir / "plots");
    plot_radius_curve(report.radius_curve, dir / "plots" / "accuracy_vs_radius.png");
  }
}

}  // namespace dad
