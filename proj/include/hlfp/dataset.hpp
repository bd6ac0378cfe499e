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

#pragma once

// In-memory labelled image sets: a seeded colored-shape generator and a
// loader for directories of per-class subfolders (PNG or binary PPM).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hlfp/tensor.hpp"

namespace hlfp::data {

enum class Split { train, val };
std::string_view split_name(Split s);

struct Dataset {
  int num_classes = 0;
  int channels = 3;
  int height = 0;
  int width = 0;
  Split split = Split::train;
  std::vector<float> pixels;  // N*C*H*W, sample-major
  std::vector<int> labels;    // 1..num_classes
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::int64_t sample_numel() const { return std::int64_t{channels} * height * width; }
  /// [indices.size(), C, H, W]
  Tensor batch(std::span<const std::size_t> indices) const;
  /// Indices of samples whose label is in `classes`, in dataset order.
  std::vector<std::size_t> indices_with_labels(const std::vector<int>& classes) const;
};

/// n samples per class, class-major order. Each class has a fixed
/// (shape, color) prototype; samples vary position, scale, tint and noise.
/// Train and val draw from separate streams of the same seed.
Dataset gen_synthetic(int k, int n_per_class, int image_size, std::uint64_t seed,
                      Split split = Split::train);

inline constexpr int kMinSyntheticSize = 16;

/// Class folders are sorted by name and labelled 1..k. When `root/train` and
/// `root/val` exist they are used as the splits; otherwise every fifth image
/// of each class (sorted by file name) is held out for val. Images are
/// resized to image_size x image_size with nearest-neighbour sampling.
Dataset load_image_dir(const std::filesystem::path& root, int image_size, Split split);

/// Decoded 8-bit RGB image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;
};
Image read_image(const std::filesystem::path& path);  // .png or .ppm
void write_png(const std::filesystem::path& path, const Image& image);
void write_ppm(const std::filesystem::path& path, const Image& image);

/// Inverse of the pixel normalization used by datasets ([-1, 1] -> 0..255).
Image to_image(const Dataset& d, std::size_t index);

/// "synthetic:k,n,size,seed" or a directory path.
struct DataSource {
  bool synthetic = false;
  int k = 0;
  int n_per_class = 0;
  int image_size = 0;
  std::uint64_t seed = 0;
  std::filesystem::path dir;

  std::string to_string() const;
};
DataSource parse_data_source(std::string_view text);
/// Synthetic val sets use max(n/4, 10) samples per class.
Dataset load(const DataSource& source, int image_size, Split split);

}  // namespace hlfp::data
