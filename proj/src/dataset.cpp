// Copyright 2026 The HLFP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hlfp/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include <png.h>

#include "hlfp/errors.hpp"

namespace hlfp::data {

namespace {

constexpr std::array<std::array<float, 3>, 10> kPalette{{
    {0.90f, 0.10f, 0.10f},
    {0.10f, 0.75f, 0.15f},
    {0.15f, 0.25f, 0.95f},
    {0.95f, 0.85f, 0.10f},
    {0.80f, 0.15f, 0.85f},
    {0.10f, 0.85f, 0.85f},
    {0.95f, 0.55f, 0.10f},
    {0.55f, 0.30f, 0.10f},
    {0.95f, 0.95f, 0.95f},
    {0.45f, 0.45f, 0.45f},
}};

constexpr int kShapes = 8;

// Signed coverage test for shape `s` at normalized offset (u, v) in [-1, 1].
bool inside(int s, float u, float v) {
  const float au = std::abs(u), av = std::abs(v);
  switch (s) {
    case 0: return u * u + v * v <= 1.0f;                            // disc
    case 1: return au <= 0.8f && av <= 0.8f;                         // square
    case 2: return v >= -0.8f && v <= 0.8f && au <= (v + 0.8f) / 1.6f;  // triangle
    case 3: return (au <= 0.3f && av <= 1.0f) || (av <= 0.3f && au <= 1.0f);  // plus
    case 4: { const float r = u * u + v * v; return r <= 1.0f && r >= 0.36f; }  // ring
    case 5: return au + av <= 1.0f;                                  // diamond
    case 6: return av <= 0.35f && au <= 1.0f;                        // bar
    case 7: return (std::abs(u - v) <= 0.35f || std::abs(u + v) <= 0.35f) && au <= 0.9f &&
                   av <= 0.9f;                                       // cross
  }
  return false;
}

float to_unit(std::uint8_t v) { return (static_cast<float>(v) / 255.0f - 0.5f) * 2.0f; }

std::uint8_t from_unit(float v) {
  const float x = std::clamp((v / 2.0f + 0.5f) * 255.0f, 0.0f, 255.0f);
  return static_cast<std::uint8_t>(std::lround(x));
}

bool has_suffix(const std::filesystem::path& p, std::string_view ext) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path.string());
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return t;
    }
    throw IoError("truncated PPM header: " + path.string());
  };
  if (token() != "P6") throw IoError("only binary PPM (P6) is supported: " + path.string());
  Image img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) throw IoError("PPM max value must be 255: " + path.string());
  } catch (const std::logic_error&) {
    throw IoError("malformed PPM header: " + path.string());
  }
  if (img.width < 1 || img.height < 1) throw IoError("empty PPM image: " + path.string());
  in.get();
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  if (!in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size())))
    throw IoError("truncated PPM data: " + path.string());
  return img;
}

// Keeps libpng quiet; the message ends up in the thrown IoError instead.
void png_fail(png_structp png, png_const_charp msg) {
  if (auto* out = static_cast<std::string*>(png_get_error_ptr(png))) *out = msg;
  png_longjmp(png, 1);
}
void png_quiet(png_structp, png_const_charp) {}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open image: " + path.string());
  std::string why;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &why, png_fail, png_quiet);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("cannot decode PNG " + path.string() + ": " + why);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgb.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  rows.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] = img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void append_resized(Dataset& d, const Image& img) {
  const int s = d.height;
  const std::size_t base = d.pixels.size();
  d.pixels.resize(base + static_cast<std::size_t>(3 * s * s));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const int sy = std::min(img.height - 1, y * img.height / s);
        const int sx = std::min(img.width - 1, x * img.width / s);
        d.pixels[base + static_cast<std::size_t>((c * s + y) * s + x)] =
            to_unit(img.rgb[static_cast<std::size_t>((sy * img.width + sx) * 3 + c)]);
      }
}

std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool dirs) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (dirs && e.is_directory()) out.push_back(e.path());
    if (!dirs && e.is_regular_file() && (has_suffix(e.path(), ".png") || has_suffix(e.path(), ".ppm")))
      out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::string_view split_name(Split s) { return s == Split::train ? "train" : "val"; }

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const auto n = sample_numel();
  Tensor out({static_cast<std::int64_t>(indices.size()), channels, height, width});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ValidationError("sample index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * static_cast<std::size_t>(n)), n,
                out.raw() + static_cast<std::ptrdiff_t>(i) * n);
  }
  return out;
}

std::vector<std::size_t> Dataset::indices_with_labels(const std::vector<int>& classes) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (std::find(classes.begin(), classes.end(), labels[i]) != classes.end()) out.push_back(i);
  return out;
}

Dataset gen_synthetic(int k, int n_per_class, int image_size, std::uint64_t seed, Split split) {
  if (k < 2) throw ValidationError("synthetic data needs at least 2 classes");
  if (n_per_class < 1) throw ValidationError("synthetic data needs at least 1 sample per class");
  if (image_size < kMinSyntheticSize)
    throw ValidationError("image size " + std::to_string(image_size) +
                          " is too small for synthetic shapes (minimum " +
                          std::to_string(kMinSyntheticSize) + ")");
  Dataset d;
  d.num_classes = k;
  d.height = d.width = image_size;
  d.split = split;
  const int s = image_size;
  d.pixels.reserve(static_cast<std::size_t>(k) * n_per_class * 3 * s * s);

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    split == Split::train ? 0x7a11u : 0x0da1u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, 0.08f);

  for (int c = 0; c < k; ++c) {
    // Class c -> shape c mod 8, color (c + c/10) mod 10, background band c/80.
    const int shape = c % kShapes;
    const auto& color = kPalette[static_cast<std::size_t>((c + c / 10) % 10)];
    const float bg = 0.08f + 0.12f * static_cast<float>((c / 80) % 4);
    d.class_names.push_back("class_" + std::to_string(c + 1));
    for (int n = 0; n < n_per_class; ++n) {
      const float radius = s * (0.22f + 0.08f * unit(rng));
      const float cx = s * (0.35f + 0.3f * unit(rng));
      const float cy = s * (0.35f + 0.3f * unit(rng));
      std::array<float, 3> tint{};
      for (auto& t : tint) t = 0.85f + 0.15f * unit(rng);
      const std::size_t base = d.pixels.size();
      d.pixels.resize(base + static_cast<std::size_t>(3 * s * s));
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const bool on = inside(shape, (static_cast<float>(x) + 0.5f - cx) / radius,
                                 (static_cast<float>(y) + 0.5f - cy) / radius);
          for (int ch = 0; ch < 3; ++ch) {
            const float v = on ? color[static_cast<std::size_t>(ch)] * tint[static_cast<std::size_t>(ch)] : bg;
            d.pixels[base + static_cast<std::size_t>((ch * s + y) * s + x)] =
                (std::clamp(v + noise(rng), 0.0f, 1.0f) - 0.5f) * 2.0f;
          }
        }
      d.labels.push_back(c + 1);
    }
  }
  return d;
}

Image read_image(const std::filesystem::path& path) {
  if (has_suffix(path, ".png")) return read_png(path);
  if (has_suffix(path, ".ppm")) return read_ppm(path);
  throw IoError("unsupported image format: " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()),
            static_cast<std::streamsize>(image.rgb.size()));
}

void write_png(const std::filesystem::path& path, const Image& image) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot write image: " + path.string());
  std::string why;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &why, png_fail, png_quiet);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot encode PNG " + path.string() + ": " + why);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image to_image(const Dataset& d, std::size_t index) {
  if (d.channels != 3) throw ValidationError("only RGB datasets convert to images");
  Image img{d.width, d.height, {}};
  img.rgb.resize(static_cast<std::size_t>(d.width) * d.height * 3);
  const auto n = static_cast<std::size_t>(d.sample_numel());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x)
        img.rgb[static_cast<std::size_t>((y * d.width + x) * 3 + c)] =
            from_unit(d.pixels[index * n + static_cast<std::size_t>((c * d.height + y) * d.width + x)]);
  return img;
}

Dataset load_image_dir(const std::filesystem::path& root, int image_size, Split split) {
  if (!std::filesystem::is_directory(root)) throw IoError("data directory not found: " + root.string());
  if (image_size < 1) throw ValidationError("image size must be positive");
  const bool presplit = std::filesystem::is_directory(root / "train") &&
                        std::filesystem::is_directory(root / "val");
  const auto class_root = presplit ? root / std::string(split_name(split)) : root;
  const auto classes = sorted_entries(class_root, true);
  if (classes.size() < 2) throw IoError("need at least 2 class folders under " + class_root.string());

  Dataset d;
  d.num_classes = static_cast<int>(classes.size());
  d.height = d.width = image_size;
  d.split = split;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    d.class_names.push_back(classes[c].filename().string());
    const auto files = sorted_entries(classes[c], false);
    for (std::size_t i = 0; i < files.size(); ++i) {
      if (!presplit && ((i % 5 == 4) != (split == Split::val))) continue;
      append_resized(d, read_image(files[i]));
      d.labels.push_back(static_cast<int>(c) + 1);
    }
  }
  if (d.labels.empty())
    throw IoError("no " + std::string(split_name(split)) + " images under " + class_root.string());
  return d;
}

std::string DataSource::to_string() const {
  if (!synthetic) return dir.string();
  std::ostringstream s;
  s << "synthetic:" << k << "," << n_per_class << "," << image_size << "," << seed;
  return s.str();
}

DataSource parse_data_source(std::string_view text) {
  DataSource src;
  constexpr std::string_view prefix = "synthetic:";
  if (!text.starts_with(prefix)) {
    if (text.empty()) throw ValidationError("empty data source");
    src.dir = std::string(text);
    return src;
  }
  src.synthetic = true;
  std::string rest(text.substr(prefix.size()));
  std::replace(rest.begin(), rest.end(), ',', ' ');
  std::istringstream in(rest);
  long long k = 0, n = 0, size = 0;
  unsigned long long seed = 0;
  std::string extra;
  if (!(in >> k >> n >> size >> seed) || (in >> extra))
    throw ValidationError("synthetic data source must be synthetic:k,n,size,seed");
  src.k = static_cast<int>(k);
  src.n_per_class = static_cast<int>(n);
  src.image_size = static_cast<int>(size);
  src.seed = seed;
  return src;
}

Dataset load(const DataSource& source, int image_size, Split split) {
  if (!source.synthetic) return load_image_dir(source.dir, image_size, split);
  if (source.image_size != image_size)
    throw ValidationError("synthetic image size " + std::to_string(source.image_size) +
                          " does not match the model input " + std::to_string(image_size));
  const int n = split == Split::train ? source.n_per_class : std::max(source.n_per_class / 4, 10);
  return gen_synthetic(source.k, n, source.image_size, source.seed, split);
}

}  // namespace hlfp::data
