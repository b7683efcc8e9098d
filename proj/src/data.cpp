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

#include "dad/data.hpp"

#include <spdlog/spdlog.h>
#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>

#include "dad/error.hpp"
#include "dad/image_io.hpp"
#include "dad/rng.hpp"

namespace fs = std::filesystem;

namespace dad {

LabeledImages LabeledImages::select(std::span<const std::size_t> indices) const {
  LabeledImages out;
  out.images = images.select(indices);
  out.id = id;
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(i));
  return out;
}

namespace {

// Reads a whole file, transparently gunzipping.
std::string read_maybe_gzip(const fs::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw DecodeError(path.string() + ": decompression failed");
  return out;
}

std::uint32_t big_endian_u32(const std::string& bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

bool is_png(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png";
}

std::optional<std::pair<fs::path, fs::path>> find_idx_pair(const fs::path& dir) {
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.find("images-idx3") == std::string::npos) continue;
    auto label_name = name;
    label_name.replace(label_name.find("images-idx3"), 11, "labels-idx1");
    if (fs::exists(dir / label_name)) return std::make_pair(entry.path(), dir / label_name);
  }
  return std::nullopt;
}

void add_checksum(IngestManifest* manifest, const fs::path& root, const fs::path& file) {
  if (manifest) manifest->checksums.emplace_back(fs::relative(file, root).generic_string(), file_checksum(file));
}

}  // namespace

LabeledImages load_digits_csv(const fs::path& path, std::size_t max_rows) {
  const std::string text = read_maybe_gzip(path);
  std::istringstream in(text);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(cells, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty()) continue;  // header line
      throw DecodeError(path.string() + ": non-numeric cell");
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw DecodeError(path.string() + ": ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DecodeError(path.string() + ": no rows");
  const std::size_t cols = rows.front().size();
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(cols - 1))));
  if (side * side + 1 != cols) throw DecodeError(path.string() + ": column count is not 1 + w*w");

  auto digit_column = [&](std::size_t c) {
    bool varied = false;
    for (const auto& r : rows) {
      if (r[c] < 0 || r[c] > 9 || r[c] != std::floor(r[c])) return false;
      varied |= r[c] != rows.front()[c];
    }
    return varied;
  };
  const bool label_last = digit_column(cols - 1);
  if (!label_last && !digit_column(0)) throw DecodeError(path.string() + ": no label column found");

  // The reference file is sorted by label, so subsampling takes an even stride.
  std::vector<std::size_t> keep(rows.size());
  std::iota(keep.begin(), keep.end(), 0);
  if (max_rows && max_rows < rows.size()) {
    std::vector<std::size_t> strided;
    for (std::size_t i = 0; i < max_rows; ++i) strided.push_back(i * rows.size() / max_rows);
    keep = std::move(strided);
  }
  LabeledImages out;
  out.id = path.filename().string();
  out.images = ImageBatch(keep.size(), 1, side);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto& r = rows[keep[k]];
    const std::size_t first = label_last ? 0 : 1;
    out.labels.push_back(static_cast<int>(label_last ? r[cols - 1] : r[0]));
    auto dst = out.images.sample(k);
    for (std::size_t i = 0; i < side * side; ++i) dst[i] = std::clamp(r[first + i] / 255.0, 0.0, 1.0);
  }
  return out;
}

LabeledImages load_idx(const fs::path& images, const fs::path& labels, std::size_t max_samples) {
  const std::string img = read_maybe_gzip(images);
  const std::string lab = read_maybe_gzip(labels);
  if (img.size() < 16 || big_endian_u32(img, 0) != 0x00000803) throw DecodeError(images.string() + ": not IDX3 u8");
  if (lab.size() < 8 || big_endian_u32(lab, 0) != 0x00000801) throw DecodeError(labels.string() + ": not IDX1 u8");
  const std::size_t n = big_endian_u32(img, 4);
  const std::size_t h = big_endian_u32(img, 8);
  const std::size_t w = big_endian_u32(img, 12);
  if (h != w) throw DecodeError(images.string() + ": images are not square");
  if (big_endian_u32(lab, 4) != n) throw DecodeError("IDX image/label counts differ");
  if (img.size() != 16 + n * h * w || lab.size() != 8 + n) throw DecodeError("IDX payload truncated");
  const std::size_t count = max_samples ? std::min(n, max_samples) : n;
  LabeledImages out;
  out.id = images.filename().string();
  out.images = ImageBatch(count, 1, w);
  for (std::size_t i = 0; i < count; ++i) {
    out.labels.push_back(static_cast<unsigned char>(lab[8 + i]));
    auto dst = out.images.sample(i);
    for (std::size_t p = 0; p < h * w; ++p) dst[p] = static_cast<unsigned char>(img[16 + i * h * w + p]) / 255.0;
  }
  return out;
}

LabeledImages load_png_directory(const fs::path& dir, const IngestOptions& opts, IngestManifest* manifest) {
  std::vector<fs::path> classes;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) classes.push_back(entry.path());
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw InputError(dir.string() + ": no class subdirectories");

  LabeledImages out;
  out.id = dir.filename().string();
  out.images = ImageBatch(0, opts.channels, opts.side);
  std::size_t skipped = 0;
  for (std::size_t label = 0; label < classes.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(classes[label]))
      if (entry.is_regular_file() && is_png(entry.path())) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      if (opts.max_samples && out.size() >= opts.max_samples) break;
      RawImage raw;
      try {
        raw = read_png(file);
      } catch (const Error& e) {
        spdlog::warn("skipping {}: {}", file.string(), e.what());
        ++skipped;
        continue;
      }
      raw = resize_bilinear(convert_channels(raw, opts.channels), opts.side, opts.side);
      out.images.append(ImageBatch(1, opts.channels, opts.side, std::move(raw.data)));
      out.labels.push_back(static_cast<int>(label));
      add_checksum(manifest, dir, file);
    }
    if (manifest) manifest->class_names.push_back(classes[label].filename().string());
  }
  if (skipped) spdlog::warn("{}: skipped {} unreadable file(s)", dir.string(), skipped);
  if (manifest) {
    manifest->loaded = out.size();
    manifest->skipped = skipped;
  }
  return out;
}

namespace {

// Brings any loaded set to the requested channel count and side.
LabeledImages conform(LabeledImages data, const IngestOptions& opts) {
  if (data.images.channels() == opts.channels && data.images.side() == opts.side) return data;
  ImageBatch out(data.size(), opts.channels, opts.side);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto s = data.images.sample(i);
    RawImage raw{data.images.channels(), data.images.side(), data.images.side(), {s.begin(), s.end()}};
    raw = resize_bilinear(convert_channels(raw, opts.channels), opts.side, opts.side);
    std::copy(raw.data.begin(), raw.data.end(), out.sample(i).begin());
  }
  data.images = std::move(out);
  return data;
}

}  // namespace

LabeledImages ingest_dataset(const fs::path& source, const IngestOptions& opts, IngestManifest* manifest) {
  if (!fs::exists(source)) throw InputError(source.string() + ": no such dataset");
  IngestManifest local;
  IngestManifest* m = manifest ? manifest : &local;
  m->source = source.string();
  LabeledImages data;
  if (fs::is_directory(source)) {
    if (auto idx = find_idx_pair(source)) {
      m->format = "idx";
      data = load_idx(idx->first, idx->second, opts.max_samples);
      add_checksum(m, source, idx->first);
      add_checksum(m, source, idx->second);
    } else {
      m->format = "png-class-dirs";
      return load_png_directory(source, opts, m);
    }
  } else {
    const auto name = source.filename().string();
    if (name.ends_with(".csv") || name.ends_with(".csv.gz")) {
      m->format = "csv";
      data = load_digits_csv(source, opts.max_samples);
      m->checksums.emplace_back(name, file_checksum(source));
    } else {
      throw InputError(source.string() + ": unrecognized dataset format");
    }
  }
  m->loaded = data.size();
  return conform(std::move(data), opts);
}

namespace {

struct Canvas {
  std::size_t side;
  std::vector<double> px;
  // Inverse pose applied to every sample point: unit-square point -> shape space.
  double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;
  explicit Canvas(std::size_t s) : side(s), px(s * s, 0.0) {}

  // Shape drawn scaled by `scale`, rotated by `angle` and shifted, about the centre.
  void pose(double scale, double angle, double dx, double dy) {
    const double cs = std::cos(angle) / scale, sn = std::sin(angle) / scale;
    a = cs, b = sn, c = -sn, d = cs;
    tx = 0.5 - (a * (0.5 + dx) + b * (0.5 + dy));
    ty = 0.5 - (c * (0.5 + dx) + d * (0.5 + dy));
  }

  // Coordinates are in unit-square space, scaled to the canvas.
  template <typename Inside>
  void fill(Inside inside, double level) {
    const double s = static_cast<double>(side);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x) {
        // 2x2 supersampling for soft edges.
        double cover = 0.0;
        for (int sy = 0; sy < 2; ++sy)
          for (int sx = 0; sx < 2; ++sx) {
            const double u = (static_cast<double>(x) + 0.25 + 0.5 * sx) / s;
            const double v = (static_cast<double>(y) + 0.25 + 0.5 * sy) / s;
            cover += inside(a * u + b * v + tx, c * u + d * v + ty);
          }
        cover /= 4.0;
        auto& p = px[y * side + x];
        p = std::max(p, cover * level);
      }
  }
  void rect(double x0, double y0, double x1, double y1, double level) {
    fill([=](double x, double y) { return x >= x0 && x <= x1 && y >= y0 && y <= y1 ? 1.0 : 0.0; }, level);
  }
  // Trapezoid with horizontal top/bottom edges.
  void trapezoid(double y0, double y1, double top_l, double top_r, double bot_l, double bot_r, double level) {
    fill(
        [=](double x, double y) {
          if (y < y0 || y > y1) return 0.0;
          const double t = (y - y0) / (y1 - y0);
          const double l = top_l + t * (bot_l - top_l);
          const double r = top_r + t * (bot_r - top_r);
          return x >= l && x <= r ? 1.0 : 0.0;
        },
        level);
  }
  void ellipse(double cx, double cy, double rx, double ry, double level) {
    fill(
        [=](double x, double y) {
          const double dx = (x - cx) / rx, dy = (y - cy) / ry;
          return dx * dx + dy * dy <= 1.0 ? 1.0 : 0.0;
        },
        level);
  }
};

void draw_item(Canvas& c, int cls, Rng& rng) {
  auto j = [&](double spread) { return uniform(rng, -spread, spread); };
  const double lv = uniform(rng, 0.55, 1.0);
  const double cx = 0.5 + j(0.04);
  switch (cls) {
    case 0: {  // t-shirt: body plus short sleeves
      const double w = 0.22 + j(0.03);
      c.rect(cx - w, 0.22 + j(0.02), cx + w, 0.86 + j(0.03), lv);
      c.trapezoid(0.2, 0.42, cx - w - 0.02, cx - w + 0.05, cx - w - 0.2, cx - w, lv);
      c.trapezoid(0.2, 0.42, cx + w - 0.05, cx + w + 0.02, cx + w, cx + w + 0.2, lv);
      break;
    }
    case 1: {  // trouser: two legs joined at the waist
      const double gap = 0.03 + j(0.015);
      c.rect(cx - 0.2, 0.1, cx + 0.2, 0.28, lv);
      c.trapezoid(0.28, 0.94, cx - 0.2, cx - gap, cx - 0.22, cx - gap - 0.04, lv);
      c.trapezoid(0.28, 0.94, cx + gap, cx + 0.2, cx + gap + 0.04, cx + 0.22, lv);
      break;
    }
    case 2: {  // pullover: body plus long sleeves
      const double w = 0.2 + j(0.03);
      c.rect(cx - w, 0.18, cx + w, 0.88 + j(0.03), lv);
      c.trapezoid(0.18, 0.84, cx - w - 0.04, cx - w + 0.02, cx - w - 0.16, cx - w - 0.06, lv * 0.9);
      c.trapezoid(0.18, 0.84, cx + w - 0.02, cx + w + 0.04, cx + w + 0.06, cx + w + 0.16, lv * 0.9);
      break;
    }
    case 3: {  // dress: narrow top widening to the hem
      c.trapezoid(0.08 + j(0.02), 0.94, cx - 0.1, cx + 0.1, cx - 0.3 + j(0.04), cx + 0.3 + j(0.04), lv);
      break;
    }
    case 4: {  // coat: long body, sleeves, darker front seam
      const double w = 0.22 + j(0.03);
      c.rect(cx - w, 0.12, cx + w, 0.95, lv);
      c.trapezoid(0.12, 0.8, cx - w - 0.04, cx - w + 0.02, cx - w - 0.14, cx - w - 0.04, lv);
      c.trapezoid(0.12, 0.8, cx + w - 0.02, cx + w + 0.04, cx + w + 0.04, cx + w + 0.14, lv);
      c.fill([=](double x, double y) { return std::abs(x - cx) < 0.015 && y > 0.15 ? 1.0 : 0.0; }, lv * 0.4);
      break;
    }
    case 5: {  // sandal: thin sole and straps
      const double y = 0.62 + j(0.05);
      c.rect(0.06, y + 0.12, 0.94, y + 0.18, lv);
      for (int k = 0; k < 3; ++k) {
        const double x = 0.2 + 0.25 * k + j(0.03);
        c.trapezoid(y - 0.05, y + 0.12, x, x + 0.06, x - 0.04, x + 0.1, lv * 0.85);
      }
      break;
    }
    case 6: {  // shirt: body, sleeves, collar and button placket
      const double w = 0.2 + j(0.03);
      c.rect(cx - w, 0.16, cx + w, 0.9, lv * 0.8);
      c.trapezoid(0.16, 0.7, cx - w - 0.03, cx - w + 0.02, cx - w - 0.13, cx - w - 0.04, lv * 0.8);
      c.trapezoid(0.16, 0.7, cx + w - 0.02, cx + w + 0.03, cx + w + 0.04, cx + w + 0.13, lv * 0.8);
      c.trapezoid(0.12, 0.24, cx - 0.1, cx + 0.1, cx - 0.05, cx + 0.05, lv);
      for (int k = 0; k < 5; ++k) c.ellipse(cx, 0.3 + 0.12 * k, 0.015, 0.015, 1.0);
      break;
    }
    case 7: {  // sneaker: low profile shoe with sole
      const double y = 0.5 + j(0.05);
      c.trapezoid(y, y + 0.2, 0.35, 0.7, 0.06, 0.94, lv);
      c.rect(0.05, y + 0.2, 0.95, y + 0.27, std::min(1.0, lv + 0.2));
      break;
    }
    case 8: {  // bag: box with handle
      const double w = 0.3 + j(0.05);
      c.rect(cx - w, 0.4 + j(0.04), cx + w, 0.9, lv);
      c.fill(
          [=](double x, double y) {
            const double dx = (x - cx) / 0.18, dy = (y - 0.4) / 0.22;
            const double d = dx * dx + dy * dy;
            return y < 0.4 && d <= 1.0 && d >= 0.55 ? 1.0 : 0.0;
          },
          lv);
      break;
    }
    default: {  // ankle boot: shaft plus foot
      const double x0 = 0.3 + j(0.05);
      c.rect(x0, 0.12, x0 + 0.3, 0.7, lv);
      c.trapezoid(0.55, 0.85, x0, x0 + 0.35, x0, 0.95, lv);
      c.rect(x0, 0.85, 0.96, 0.92, std::min(1.0, lv + 0.2));
      break;
    }
  }
}

}  // namespace

LabeledImages make_apparel_silhouettes(std::size_t per_class, std::uint64_t seed, std::size_t side) {
  LabeledImages out;
  out.id = "apparel-silhouettes-" + std::to_string(seed);
  out.images = ImageBatch(per_class * 10, 1, side);
  Rng rng(seed);
  std::size_t k = 0;
  for (std::size_t i = 0; i < per_class; ++i)
    for (int cls = 0; cls < 10; ++cls, ++k) {
      Canvas c(side);
      c.pose(uniform(rng, 0.75, 1.1), uniform(rng, -0.2, 0.2), uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08));
      draw_item(c, cls, rng);
      // Fabric texture, uneven lighting and sensor noise.
      const double freq = uniform(rng, 4.0, 14.0);
      const double phase = uniform(rng, 0.0, 2 * std::numbers::pi);
      const double texture = uniform(rng, 0.05, 0.3);
      const double gx = uniform(rng, -0.5, 0.5), gy = uniform(rng, -0.5, 0.5);
      const double noise = uniform(rng, 0.02, 0.08);
      auto dst = out.images.sample(k);
      for (std::size_t p = 0; p < side * side; ++p) {
        const double x = static_cast<double>(p % side) / side, y = static_cast<double>(p / side) / side;
        double v = c.px[p];
        if (v > 0.0) {
          v *= 1.0 - texture * 0.5 * (1.0 + std::sin(freq * (x + 0.3 * y) * 2 * std::numbers::pi + phase));
          v *= 1.0 + gx * (x - 0.5) + gy * (y - 0.5);
        }
        dst[p] = std::clamp(v + normal(rng, 0.0, noise), 0.0, 1.0);
      }
      out.labels.push_back(cls);
    }
  return out;
}

std::pair<LabeledImages, LabeledImages> stratified_split(const LabeledImages& data, double first_fraction,
                                                         std::uint64_t seed) {
  if (first_fraction < 0.0 || first_fraction > 1.0) throw ConfigError("split fraction must be in [0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> first, second;
  for (auto& [label, idx] : by_class) {
    shuffle(std::span<std::size_t>(idx), rng);
    const auto cut = static_cast<std::size_t>(std::lround(first_fraction * static_cast<double>(idx.size())));
    first.insert(first.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
    second.insert(second.end(), idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  }
  // Interleave classes so downstream prefixes stay balanced.
  shuffle(std::span<std::size_t>(first), rng);
  shuffle(std::span<std::size_t>(second), rng);
  return {data.select(first), data.select(second)};
}

}  // namespace dad
