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

#include "dad/image_io.hpp"

#include <openssl/sha.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <regex>
#include <sstream>

#include "dad/error.hpp"

namespace dad {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

RawImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DecodeError(path.string() + ": not a PNG file");

  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("libpng initialization failed");
  }
  RawImage img;
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError(path.string() + ": " + (message.empty() ? "corrupt PNG" : message));
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t plane = img.width * img.height;
  img.data.resize(img.channels * plane);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        img.data[c * plane + y * img.width + x] = rows[y][x * img.channels + c] / 255.0;
  return img;
}

void write_png(const std::filesystem::path& path, const RawImage& image) {
  if (image.channels != 1 && image.channels != 3) throw InputError("write_png: need 1 or 3 channels");
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot write " + path.string());
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  const std::size_t plane = image.width * image.height;
  std::vector<png_byte> row(image.width * image.channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c)
        row[x * image.channels + c] = to_byte(image.data[c * plane + y * image.width + x]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png_gray(const std::filesystem::path& path, std::span<const double> values, std::size_t height,
                    std::size_t width) {
  RawImage img{1, height, width, {values.begin(), values.end()}};
  write_png(path, img);
}

RawImage resize_bilinear(const RawImage& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  RawImage out{image.channels, height, width, std::vector<double>(image.channels * height * width)};
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  for (std::size_t c = 0; c < image.channels; ++c) {
    const double* src = image.data.data() + c * image.height * image.width;
    for (std::size_t y = 0; y < height; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                   static_cast<double>(image.height - 1));
      const auto y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, image.height - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                     static_cast<double>(image.width - 1));
        const auto x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, image.width - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = src[y0 * image.width + x0] * (1 - wx) + src[y0 * image.width + x1] * wx;
        const double bot = src[y1 * image.width + x0] * (1 - wx) + src[y1 * image.width + x1] * wx;
        out.data[(c * height + y) * width + x] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

RawImage convert_channels(const RawImage& image, std::size_t channels) {
  if (image.channels == channels) return image;
  const std::size_t plane = image.height * image.width;
  RawImage out{channels, image.height, image.width, std::vector<double>(channels * plane)};
  if (channels == 1 && image.channels == 3) {
    for (std::size_t i = 0; i < plane; ++i)
      out.data[i] = 0.299 * image.data[i] + 0.587 * image.data[plane + i] + 0.114 * image.data[2 * plane + i];
  } else if (channels == 3 && image.channels == 1) {
    for (std::size_t c = 0; c < 3; ++c) std::copy(image.data.begin(), image.data.end(), out.data.begin() + c * plane);
  } else {
    throw InputError("cannot convert " + std::to_string(image.channels) + " channels to " +
                     std::to_string(channels));
  }
  return out;
}

namespace {

std::string npy_header(const std::string& descr, std::span<const std::size_t> shape) {
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dims += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dims += ",";
    if (i + 1 < shape.size()) dims += " ";
  }
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (" + dims + "), }";
  // Magic (6) + version (2) + length (2) + dict + newline, padded to 64 bytes.
  const std::size_t total = 10 + dict.size() + 1;
  dict.append((64 - total % 64) % 64, ' ');
  dict += '\n';
  std::string header("\x93NUMPY\x01\x00", 8);
  header += static_cast<char>(dict.size() & 0xff);
  header += static_cast<char>((dict.size() >> 8) & 0xff);
  return header + dict;
}

template <typename T>
void write_raw(const std::filesystem::path& path, const std::string& descr, std::span<const std::size_t> shape,
               std::span<const T> values) {
  std::size_t volume = 1;
  for (auto d : shape) volume *= d;
  if (volume != values.size()) throw InputError("write_npy: shape does not match value count");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << npy_header(descr, shape);
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  if (!os) throw IoError("write failed: " + path.string());
}

template <typename T>
void widen(const std::string& bytes, std::size_t offset, std::size_t count, std::vector<double>& out) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    T v;
    std::memcpy(&v, bytes.data() + offset + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

}  // namespace

void write_npy(const std::filesystem::path& path, std::span<const std::size_t> shape,
               std::span<const double> values) {
  write_raw(path, "<f8", shape, values);
}

void write_npy_int(const std::filesystem::path& path, std::span<const std::size_t> shape,
                   std::span<const std::int64_t> values) {
  write_raw(path, "<i8", shape, values);
}

void write_npy_bool(const std::filesystem::path& path, std::span<const std::size_t> shape,
                    std::span<const bool> values) {
  std::vector<std::uint8_t> bytes(values.begin(), values.end());
  write_raw(path, "|b1", shape, std::span<const std::uint8_t>(bytes));
}

void write_npy_bool(const std::filesystem::path& path, const std::vector<bool>& values) {
  std::vector<std::uint8_t> bytes(values.begin(), values.end());
  const std::size_t shape[] = {values.size()};
  write_raw(path, "|b1", shape, std::span<const std::uint8_t>(bytes));
}

NpyArray read_npy(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0) throw DecodeError(path.string() + ": not an npy file");
  const int major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw DecodeError(path.string() + ": truncated header");
    for (int i = 3; i >= 0; --i) header_len = (header_len << 8) | static_cast<unsigned char>(bytes[8 + i]);
    offset = 12;
  } else {
    throw DecodeError(path.string() + ": unsupported npy version");
  }
  if (bytes.size() < offset + header_len) throw DecodeError(path.string() + ": truncated header");
  const std::string header = bytes.substr(offset, header_len);
  offset += header_len;

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, descr_re)) throw DecodeError(path.string() + ": missing descr");
  const std::string descr = m[1];
  if (std::regex_search(header, m, order_re) && m[1] == "True")
    throw DecodeError(path.string() + ": fortran order unsupported");
  if (!std::regex_search(header, m, shape_re)) throw DecodeError(path.string() + ": missing shape");
  NpyArray arr;
  std::stringstream dims(m[1].str());
  std::string tok;
  while (std::getline(dims, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), ::isspace), tok.end());
    if (!tok.empty()) arr.shape.push_back(std::stoull(tok));
  }
  std::size_t count = 1;
  for (auto d : arr.shape) count *= d;

  std::size_t width = 0;
  if (descr == "<f8" || descr == "<i8") width = 8;
  else if (descr == "<f4" || descr == "<i4") width = 4;
  else if (descr == "|u1" || descr == "|b1") width = 1;
  else throw DecodeError(path.string() + ": unsupported dtype " + descr);
  if (bytes.size() - offset != count * width) throw DecodeError(path.string() + ": payload size mismatch");

  if (descr == "<f8") widen<double>(bytes, offset, count, arr.values);
  else if (descr == "<f4") widen<float>(bytes, offset, count, arr.values);
  else if (descr == "<i8") widen<std::int64_t>(bytes, offset, count, arr.values);
  else if (descr == "<i4") widen<std::int32_t>(bytes, offset, count, arr.values);
  else widen<std::uint8_t>(bytes, offset, count, arr.values);
  return arr;
}

std::string bytes_checksum(std::span<const unsigned char> bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(bytes.data(), bytes.size(), digest);
  std::string hex;
  hex.reserve(2 * SHA256_DIGEST_LENGTH);
  static const char* kDigits = "0123456789abcdef";
  for (auto b : digest) {
    hex += kDigits[b >> 4];
    hex += kDigits[b & 15];
  }
  return hex;
}

std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return bytes_checksum({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
}

}  // namespace dad
