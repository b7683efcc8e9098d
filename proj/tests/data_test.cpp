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

#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "dad/error.hpp"
#include "dad/image_io.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace dad {
namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("dad_data_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(PngTest, GrayRoundtripWithin8BitQuantization) {
  const auto dir = fresh_dir("png");
  const auto img = dad::testing::random_images(1, 1, 9, 1);
  write_png_gray(dir / "a.png", img.sample(0), 9, 9);
  const auto back = read_png(dir / "a.png");
  ASSERT_EQ(back.channels, 1u);
  ASSERT_EQ(back.width, 9u);
  for (std::size_t i = 0; i < 81; ++i) EXPECT_NEAR(back.data[i], img.sample(0)[i], 0.5 / 255 + 1e-12);
}

TEST(PngTest, GarbageIsDecodeError) {
  const auto dir = fresh_dir("garbage");
  std::ofstream(dir / "bad.png") << "not a png";
  EXPECT_THROW(read_png(dir / "bad.png"), DecodeError);
}

TEST(NpyTest, RoundtripAllDtypes) {
  const auto dir = fresh_dir("npy");
  const std::vector<std::size_t> shape = {2, 3};
  const std::vector<double> v = {0.5, -1, 2, 3.25, 1e-9, 7};
  write_npy(dir / "f.npy", shape, v);
  auto a = read_npy(dir / "f.npy");
  EXPECT_EQ(a.shape, shape);
  EXPECT_EQ(a.values, v);
  const std::vector<std::int64_t> iv = {1, -2, 3};
  const std::size_t ishape[] = {3};
  write_npy_int(dir / "i.npy", ishape, iv);
  EXPECT_EQ(read_npy(dir / "i.npy").values, (std::vector<double>{1, -2, 3}));
  write_npy_bool(dir / "b.npy", std::vector<bool>{true, false, true});
  EXPECT_EQ(read_npy(dir / "b.npy").values, (std::vector<double>{1, 0, 1}));
  // Header is padded to a 64-byte boundary as numpy does.
  std::ifstream is(dir / "f.npy", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  EXPECT_EQ((bytes.size() - v.size() * 8) % 64, 0u);
}

TEST(NpyTest, TruncatedPayloadRejected) {
  const auto dir = fresh_dir("npy_trunc");
  const std::size_t shape[] = {4};
  const std::vector<double> v = {1, 2, 3, 4};
  write_npy(dir / "f.npy", shape, v);
  fs::resize_file(dir / "f.npy", fs::file_size(dir / "f.npy") - 8);
  EXPECT_THROW(read_npy(dir / "f.npy"), DecodeError);
}

TEST(ChecksumTest, KnownSha256) {
  const std::string abc = "abc";
  EXPECT_EQ(bytes_checksum({reinterpret_cast<const unsigned char*>(abc.data()), abc.size()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(IngestTest, PngClassDirectories) {
  const auto dir = fresh_dir("classes");
  for (std::string cls : {"cat", "dog"}) {
    fs::create_directories(dir / cls);
    for (int k = 0; k < 3; ++k) {
      const auto img = dad::testing::random_images(1, 1, 14, static_cast<std::uint64_t>(k + cls.size()));
      write_png_gray(dir / cls / (std::to_string(k) + ".png"), img.sample(0), 14, 14);
    }
  }
  IngestManifest m1, m2;
  const auto data = ingest_dataset(dir, {28, 1, 0}, &m1);
  EXPECT_EQ(data.size(), 6u);
  EXPECT_EQ(data.images.side(), 28u);
  EXPECT_EQ(data.labels, (std::vector<int>{0, 0, 0, 1, 1, 1}));
  EXPECT_EQ(m1.class_names, (std::vector<std::string>{"cat", "dog"}));
  EXPECT_TRUE(data.images.in_unit_range());
  ingest_dataset(dir, {28, 1, 0}, &m2);
  EXPECT_EQ(m1.checksums, m2.checksums);
}

TEST(IngestTest, CorruptFileSkippedAndCounted) {
  const auto dir = fresh_dir("corrupt");
  fs::create_directories(dir / "a");
  write_png_gray(dir / "a" / "ok.png", std::vector<double>(16, 0.5), 4, 4);
  std::ofstream(dir / "a" / "broken.png") << "\x89PNG\r\n\x1a\n truncated";
  IngestManifest m;
  const auto data = ingest_dataset(dir, {4, 1, 0}, &m);
  EXPECT_EQ(data.size(), 1u);
  EXPECT_EQ(m.skipped, 1u);
  EXPECT_EQ(m.loaded, 1u);
}

TEST(IngestTest, UnknownFormatIsInputError) {
  const auto dir = fresh_dir("unknown");
  std::ofstream(dir / "x.bin") << "zz";
  EXPECT_THROW(ingest_dataset(dir / "x.bin", {}), InputError);
  EXPECT_THROW(ingest_dataset(dir / "missing", {}), InputError);
}

TEST(IngestTest, CsvLabelColumnDetected) {
  const auto dir = fresh_dir("csv");
  {
    std::ofstream os(dir / "first.csv");
    os << "label,p0,p1,p2,p3\n3,0,255,0,0\n7,0,0,255,0\n";
    std::ofstream os2(dir / "last.csv");
    os2 << "0,255,0,0,3\n0,0,255,0,7\n";
  }
  for (auto name : {"first.csv", "last.csv"}) {
    const auto d = load_digits_csv(dir / name);
    EXPECT_EQ(d.labels, (std::vector<int>{3, 7}));
    EXPECT_EQ(d.images.side(), 2u);
  }
}

TEST(IngestTest, IdxPair) {
  const auto dir = fresh_dir("idx");
  auto be = [](std::ofstream& os, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) os.put(static_cast<char>((v >> s) & 0xff));
  };
  {
    std::ofstream img(dir / "train-images-idx3-ubyte", std::ios::binary);
    be(img, 0x803), be(img, 2), be(img, 2), be(img, 2);
    for (int i = 0; i < 8; ++i) img.put(static_cast<char>(i * 30));
    std::ofstream lab(dir / "train-labels-idx1-ubyte", std::ios::binary);
    be(lab, 0x801), be(lab, 2);
    lab.put(4), lab.put(9);
  }
  IngestManifest m;
  const auto d = ingest_dataset(dir, {2, 1, 0}, &m);
  EXPECT_EQ(m.format, "idx");
  EXPECT_EQ(d.labels, (std::vector<int>{4, 9}));
  EXPECT_DOUBLE_EQ(d.images.sample(1)[3], 210.0 / 255.0);
}

TEST(IngestTest, BundledDigits) {
  const auto d = load_digits_csv(DAD_DATA_DIR "/mnist_5k.csv.gz");
  EXPECT_EQ(d.size(), 5000u);
  EXPECT_EQ(d.images.side(), 28u);
  std::vector<int> counts(10);
  for (int l : d.labels) ++counts.at(l);
  for (int c : counts) EXPECT_EQ(c, 500);
  const auto sub = load_digits_csv(DAD_DATA_DIR "/mnist_5k.csv.gz", 100);
  EXPECT_EQ(std::set<int>(sub.labels.begin(), sub.labels.end()).size(), 10u);
}

TEST(ApparelTest, DeterministicBalancedUnitRange) {
  const auto a = make_apparel_silhouettes(5, 3);
  const auto b = make_apparel_silhouettes(5, 3);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.size(), 50u);
  EXPECT_TRUE(a.images.in_unit_range());
  std::vector<int> counts(10);
  for (int l : a.labels) ++counts.at(l);
  for (int c : counts) EXPECT_EQ(c, 5);
}

TEST(SplitTest, StratifiedAndDisjoint) {
  const auto d = make_apparel_silhouettes(10, 1);
  const auto [train, test] = stratified_split(d, 0.7, 5);
  EXPECT_EQ(train.size(), 70u);
  EXPECT_EQ(test.size(), 30u);
  std::vector<int> counts(10);
  for (int l : train.labels) ++counts.at(l);
  for (int c : counts) EXPECT_EQ(c, 7);
}

}  // namespace
}  // namespace dad
