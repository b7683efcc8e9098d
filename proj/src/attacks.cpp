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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dad/config.hpp"
#include "dad/error.hpp"
#include "dad/image_io.hpp"
#include "dad/rng.hpp"
#include "json.hpp"

namespace dad {

using nlohmann::json;

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kBim: return "bim";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kExternal: return "external";
  }
  return "unknown";
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "bim" || name == "ifgsm") return AttackKind::kBim;
  if (name == "pgd") return AttackKind::kPgd;
  if (name == "external" || name == "autoattack") return AttackKind::kExternal;
  throw ConfigError("unknown attack kind '" + name + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || epsilon > 1.0) throw ConfigError("attack epsilon must be in [0, 1]");
  if (kind == AttackKind::kFgsm && num_steps != 1) throw ConfigError("fgsm takes exactly one step");
  if ((kind == AttackKind::kBim || kind == AttackKind::kPgd) && num_steps > 0 && !(step_size > 0.0))
    throw ConfigError("attack step size must be positive");
  if (kind == AttackKind::kExternal && external_path.empty()) throw ConfigError("external attack needs a file");
}

std::string AttackConfig::tag() const {
  char buf[96];
  if (kind == AttackKind::kFgsm || kind == AttackKind::kExternal)
    std::snprintf(buf, sizeof(buf), "%s(eps=%.6g)", to_string(kind).c_str(), epsilon);
  else
    std::snprintf(buf, sizeof(buf), "%s(eps=%.6g,step=%.6g,n=%zu)", to_string(kind).c_str(), epsilon, step_size,
                  num_steps);
  return buf;
}

AttackConfig AttackConfig::fgsm(double epsilon) {
  AttackConfig c;
  c.kind = AttackKind::kFgsm;
  c.epsilon = epsilon;
  c.step_size = epsilon;
  c.num_steps = 1;
  c.random_start = false;
  return c;
}

AttackConfig AttackConfig::bim(double epsilon, double step, std::size_t steps) {
  AttackConfig c;
  c.kind = AttackKind::kBim;
  c.epsilon = epsilon;
  c.step_size = step;
  c.num_steps = steps;
  c.random_start = false;
  return c;
}

AttackConfig AttackConfig::pgd(double epsilon, double step, std::size_t steps, std::uint64_t seed) {
  AttackConfig c;
  c.kind = AttackKind::kPgd;
  c.epsilon = epsilon;
  c.step_size = step;
  c.num_steps = steps;
  c.random_start = true;
  c.seed = seed;
  return c;
}

AttackConfig AttackConfig::external(const std::filesystem::path& path, double epsilon) {
  AttackConfig c;
  c.kind = AttackKind::kExternal;
  c.epsilon = epsilon;
  c.num_steps = 0;
  c.random_start = false;
  c.external_path = path;
  return c;
}

namespace {

double sign(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

void project(std::span<double> x, std::span<const double> origin, double eps) {
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = std::clamp(std::clamp(x[i], origin[i] - eps, origin[i] + eps), 0.0, 1.0);
}

// Shared iterative sign-gradient loop; one step of size eps is FGSM.
ImageBatch iterate(const Classifier& model, const ImageBatch& clean, double eps, double step, std::size_t steps,
                   bool random_start, std::uint64_t seed, std::size_t first_index) {
  ImageBatch x = clean;
  if (eps == 0.0 || clean.empty()) return x;
  const auto labels = predict_labels(model, clean);
  if (random_start) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      Rng rng(derive_seed(seed, first_index + i));
      auto s = x.sample(i);
      for (auto& v : s) v += uniform(rng, -eps, eps);
      project(s, clean.sample(i), eps);
    }
  }
  for (std::size_t t = 0; t < steps; ++t) {
    const ImageBatch g = model.loss_input_gradient(x, labels);
    for (std::size_t i = 0; i < x.values().size(); ++i) x.values()[i] += step * sign(g.values()[i]);
    for (std::size_t i = 0; i < x.size(); ++i) project(x.sample(i), clean.sample(i), eps);
  }
  return x;
}

// Keeps gradient batches small enough for the im2col buffers.
constexpr std::size_t kChunk = 256;

template <typename Fn>
ImageBatch chunked(const ImageBatch& batch, std::size_t first_index, Fn fn) {
  if (batch.size() <= kChunk) return fn(batch, first_index);
  ImageBatch out(0, batch.channels(), batch.side());
  for (std::size_t b = 0; b < batch.size(); b += kChunk) {
    const std::size_t e = std::min(batch.size(), b + kChunk);
    out.append(fn(batch.slice(b, e), first_index + b));
  }
  return out;
}

void require_kind(const AttackConfig& cfg, AttackKind kind) {
  cfg.validate();
  if (cfg.kind != kind) throw ConfigError("attack config kind is " + to_string(cfg.kind) + ", expected " + to_string(kind));
}

}  // namespace

ImageBatch fgsm(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg) {
  require_kind(cfg, AttackKind::kFgsm);
  return run_attack(model, batch, cfg);
}

ImageBatch bim(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg) {
  require_kind(cfg, AttackKind::kBim);
  return run_attack(model, batch, cfg);
}

ImageBatch pgd(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg) {
  require_kind(cfg, AttackKind::kPgd);
  return run_attack(model, batch, cfg);
}

ImageBatch run_attack(const Classifier& model, const ImageBatch& batch, const AttackConfig& cfg,
                      std::size_t first_index) {
  cfg.validate();
  batch.check_unit_range();
  switch (cfg.kind) {
    case AttackKind::kFgsm:
      return chunked(batch, first_index, [&](const ImageBatch& b, std::size_t) {
        return iterate(model, b, cfg.epsilon, cfg.epsilon, 1, false, 0, 0);
      });
    case AttackKind::kBim:
      return chunked(batch, first_index, [&](const ImageBatch& b, std::size_t) {
        return iterate(model, b, cfg.epsilon, cfg.step_size, cfg.num_steps, false, 0, 0);
      });
    case AttackKind::kPgd:
      return chunked(batch, first_index, [&](const ImageBatch& b, std::size_t first) {
        return iterate(model, b, cfg.epsilon, cfg.step_size, cfg.num_steps, cfg.random_start, cfg.seed, first);
      });
    case AttackKind::kExternal:
      return load_external_batch(cfg, batch);
  }
  throw ConfigError("unhandled attack kind");
}

ImageBatch load_external_batch(const AttackConfig& cfg, const ImageBatch& clean) {
  const auto arr = read_npy(cfg.external_path);
  const std::vector<std::size_t> expect = {clean.size(), clean.channels(), clean.side(), clean.side()};
  if (arr.shape != expect)
    throw InputError(cfg.external_path.string() + ": external batch shape does not match the clean batch");
  ImageBatch adv(clean.size(), clean.channels(), clean.side(), arr.values);
  adv.check_unit_range();
  for (std::size_t i = 0; i < clean.size(); ++i)
    if (linf_distance(adv.sample(i), clean.sample(i)) > cfg.epsilon + 1e-7)
      throw InputError(cfg.external_path.string() + ": sample " + std::to_string(i) + " exceeds the epsilon ball");
  return adv;
}

AdversarialSet AdversarialSet::select(std::span<const std::size_t> indices) const {
  AdversarialSet out;
  out.clean = clean.select(indices);
  out.adversarial = adversarial.select(indices);
  out.configs = configs;
  out.seed = seed;
  if (fooled_mask) out.fooled_mask.emplace();
  for (auto i : indices) {
    out.attack_tags.push_back(attack_tags.at(i));
    out.epsilons.push_back(epsilons.at(i));
    if (fooled_mask) out.fooled_mask->push_back((*fooled_mask)[i]);
  }
  return out;
}

AdversarialSet make_adversarial_set(const Classifier& model, const ImageBatch& clean, const AttackConfig& cfg) {
  AdversarialSet set;
  set.clean = clean;
  set.adversarial = run_attack(model, clean, cfg);
  set.attack_tags.assign(clean.size(), cfg.tag());
  set.epsilons.assign(clean.size(), cfg.epsilon);
  set.configs = {cfg};
  set.seed = cfg.seed;
  return set;
}

AdversarialSet filter_fooling(const Classifier& model, AdversarialSet set) {
  const auto clean = predict_labels(model, set.clean);
  const auto adv = predict_labels(model, set.adversarial);
  std::vector<bool> mask(set.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = adv[i] != clean[i];
  set.fooled_mask = std::move(mask);
  return set;
}

AdversarialSet fooled_only(const AdversarialSet& set) {
  if (!set.fooled_mask) throw StateError("fooled_only: run filter_fooling first");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < set.size(); ++i)
    if ((*set.fooled_mask)[i]) keep.push_back(i);
  return set.select(keep);
}

std::vector<std::size_t> partition_counts(std::size_t n, std::span<const double> proportions) {
  double total = 0.0;
  for (double p : proportions) {
    if (!(p >= 0.0)) throw ConfigError("attack proportions must be non-negative");
    total += p;
  }
  if (proportions.empty() || std::abs(total - 1.0) > 1e-9) throw ConfigError("attack proportions must sum to 1");
  std::vector<std::size_t> counts(proportions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < proportions.size(); ++k) {
    const double exact = proportions[k] * static_cast<double>(n);
    // Guard against 0.2 * 10 evaluating to 1.9999999.
    counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[k];
    remainders.emplace_back(exact - static_cast<double>(counts[k]), k);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];
  return counts;
}

AdversarialSet build_mixed_attack_set(const Classifier& model, const ImageBatch& clean,
                                      const std::vector<AttackConfig>& configs,
                                      const std::vector<double>& proportions, std::uint64_t seed) {
  if (configs.size() != proportions.size()) throw ConfigError("one proportion per attack config is required");
  for (const auto& c : configs) c.validate();
  const auto counts = partition_counts(clean.size(), proportions);
  Rng rng(seed);
  const auto order = permutation(clean.size(), rng);

  AdversarialSet set;
  set.clean = clean;
  set.adversarial = clean;
  set.attack_tags.resize(clean.size());
  set.epsilons.resize(clean.size());
  set.configs = configs;
  set.seed = seed;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < configs.size(); ++k) {
    std::vector<std::size_t> part(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                  order.begin() + static_cast<std::ptrdiff_t>(begin + counts[k]));
    begin += counts[k];
    if (part.empty()) continue;
    std::sort(part.begin(), part.end());
    ImageBatch adv;
    if (configs[k].kind == AttackKind::kExternal) {
      // External files hold the full batch in original order.
      const auto full = load_external_batch(configs[k], clean);
      adv = full.select(part);
    } else {
      adv = run_attack(model, clean.select(part), configs[k], 0);
    }
    for (std::size_t j = 0; j < part.size(); ++j) {
      std::copy(adv.sample(j).begin(), adv.sample(j).end(), set.adversarial.sample(part[j]).begin());
      set.attack_tags[part[j]] = configs[k].tag();
      set.epsilons[part[j]] = configs[k].epsilon;
    }
  }
  return set;
}

namespace {

void save_batch(const ImageBatch& b, const std::filesystem::path& path) {
  const std::vector<std::size_t> shape = {b.size(), b.channels(), b.side(), b.side()};
  write_npy(path, shape, b.values());
}

ImageBatch load_batch(const std::filesystem::path& path) {
  auto arr = read_npy(path);
  if (arr.shape.size() != 4) throw DecodeError(path.string() + ": expected a 4-d array");
  return ImageBatch(Tensor(arr.shape, std::move(arr.values)));
}

}  // namespace

void save_adversarial_set(const AdversarialSet& set, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  save_batch(set.clean, dir / "clean.npy");
  save_batch(set.adversarial, dir / "adversarial.npy");
  json m;
  m["count"] = set.size();
  m["channels"] = set.clean.channels();
  m["side"] = set.clean.side();
  m["attack_tags"] = set.attack_tags;
  m["epsilons"] = set.epsilons;
  m["seed"] = set.seed;
  m["configs"] = json::array();
  for (const auto& c : set.configs) m["configs"].push_back(to_json(c));
  if (set.fooled_mask)
    m["fooled_mask"] = std::vector<bool>(set.fooled_mask->begin(), set.fooled_mask->end());
  else
    m["fooled_mask"] = nullptr;
  std::ofstream os(dir / "manifest.json");
  os << m.dump(2) << '\n';
  if (!os) throw IoError("cannot write manifest in " + dir.string());
}

AdversarialSet load_adversarial_set(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError(dir.string() + ": missing manifest.json");
  json m;
  try {
    m = json::parse(is);
  } catch (const json::exception& e) {
    throw DecodeError(dir.string() + "/manifest.json: " + e.what());
  }
  AdversarialSet set;
  set.clean = load_batch(dir / "clean.npy");
  set.adversarial = load_batch(dir / "adversarial.npy");
  try {
    set.attack_tags = m.at("attack_tags").get<std::vector<std::string>>();
    set.epsilons = m.at("epsilons").get<std::vector<double>>();
    set.seed = m.value("seed", std::uint64_t{0});
    for (const auto& c : m.at("configs")) set.configs.push_back(attack_config_from_json(c));
    if (!m["fooled_mask"].is_null()) set.fooled_mask = m["fooled_mask"].get<std::vector<bool>>();
  } catch (const json::exception& e) {
    throw DecodeError(dir.string() + "/manifest.json: " + e.what());
  }
  if (set.adversarial.size() != set.clean.size() || set.attack_tags.size() != set.clean.size())
    throw DecodeError(dir.string() + ": manifest and arrays disagree on sample count");
  return set;
}

}  // namespace dad
