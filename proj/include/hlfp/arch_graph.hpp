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

// Declarative description of serial-parallel residual networks.
//
// A model is a serial trunk (stem + stages), an optional superclass tier of
// s parallel stage pipelines, and k parallel class branches, each ending in a
// head that emits one logit. Plain residual networks are the degenerate case
// with no branches and a shared k-way head.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hlfp::arch {

enum class Variant {
  resnet18,
  resnet50,
  resnet152,
  hlfp_small,
  hlfp_big,
  hlfp_late_sp,
  hlfp_late_big_sp,
  hlfp_1b_late_sp,
  hlfp_nested,
};

std::string_view variant_name(Variant v);
/// Accepts underscores or hyphens ("hlfp-small" == "hlfp_small").
Variant parse_variant(std::string_view text);
std::vector<Variant> all_variants();

/// Padding is kernel/2 on each axis ("same" for odd kernels at stride 1).
struct ConvSpec {
  int kernel_h = 1;
  int kernel_w = 1;
  int in_channels = 1;
  int out_channels = 1;
  int stride = 1;
  int groups = 1;
  bool has_bias = false;

  int pad_h() const { return kernel_h / 2; }
  int pad_w() const { return kernel_w / 2; }
  std::int64_t weight_count() const;
  bool operator==(const ConvSpec&) const = default;
};

struct PoolSpec {
  int window = 3;
  int stride = 2;
  int pad = 1;
  bool operator==(const PoolSpec&) const = default;
};

enum class BlockKind { bottleneck, basic };

/// Residual block. Bottleneck: 1x1 reduce -> 3x3 (carries the stride) ->
/// 1x1 expand. Basic: 3x3 (stride) -> 3x3. Every conv is bias-free and
/// followed by an affine normalization. The shortcut is a strided 1x1
/// conv + normalization when has_projection is set.
struct BottleneckSpec {
  BlockKind kind = BlockKind::bottleneck;
  int in_channels = 1;
  int mid_channels = 1;
  int out_channels = 1;
  int stride = 1;
  bool has_projection = false;

  /// Main-path convolutions in execution order.
  std::vector<ConvSpec> main_path() const;
  ConvSpec projection() const;
  bool operator==(const BottleneckSpec&) const = default;
};

BottleneckSpec make_block(int in, int mid, int out, int stride,
                          BlockKind kind = BlockKind::bottleneck);

struct StageSpec {
  std::string name;
  BottleneckSpec block;  // first rep; later reps keep channels and stride 1
  int reps = 1;
  int parallelism = 1;

  BottleneckSpec rep_block(int rep) const;
  bool operator==(const StageSpec&) const = default;
};

enum class HeadKind {
  shared,      // one fully-connected in_features -> k after the trunk
  per_branch,  // each branch: fully-connected in_features -> 1
};

struct HeadSpec {
  HeadKind kind = HeadKind::shared;
  int in_features = 1;
  bool operator==(const HeadSpec&) const = default;
};

struct InputShape {
  int channels = 3;
  int height = 224;
  int width = 224;
  bool operator==(const InputShape&) const = default;
};

/// superclass_of[class - 1] = superclass index in 1..s.
using SuperclassMap = std::vector<int>;

struct ModelSpec {
  std::string name;
  Variant variant = Variant::resnet50;
  InputShape input;
  int num_classes = 1;
  ConvSpec stem;
  PoolSpec stem_pool;
  std::vector<StageSpec> trunk_stages;
  std::vector<StageSpec> superclass_stages;
  std::vector<StageSpec> branch_stages;
  HeadSpec head;
  std::optional<SuperclassMap> superclass_map;
  /// Classes whose branches execute, strictly increasing, 1-based.
  std::vector<int> active_classes;

  bool has_branches() const { return head.kind == HeadKind::per_branch; }
  bool is_nested() const { return !superclass_stages.empty(); }
  int num_superclasses() const;
  bool is_cutout() const { return static_cast<int>(active_classes.size()) != num_classes; }
  /// Superclass tiers referenced by the active classes, increasing.
  std::vector<int> active_superclasses() const;
  int superclass_of(int cls) const;

  bool operator==(const ModelSpec&) const = default;
};

/// Ordered subset of class indices selecting which branches execute.
class CutoutSet {
 public:
  /// Sorts the input; rejects empty sets, duplicates and indices outside 1..k.
  static CutoutSet make(std::vector<int> classes, int k);
  /// "1-5,8" style: 1-based inclusive ranges and comma lists.
  static CutoutSet parse(std::string_view text, int k);
  static CutoutSet full(int k);

  const std::vector<int>& classes() const { return classes_; }
  std::size_t size() const { return classes_.size(); }
  bool contains(int cls) const;
  std::string to_string() const;

 private:
  std::vector<int> classes_;
};

struct BuildOptions {
  int width_divisor = 1;  // all channel widths divided by this
  int input_size = 224;
};

ModelSpec build_resnet(int depth, int k, const BuildOptions& opts = {});
ModelSpec build_hlfp(Variant variant, int k, const BuildOptions& opts = {});
ModelSpec build_hlfp_nested(int k, const SuperclassMap& map, const BuildOptions& opts = {});
/// Dispatches on variant; nested requires a map.
ModelSpec build_model(Variant variant, int k, const BuildOptions& opts = {},
                      const std::optional<SuperclassMap>& map = std::nullopt);

/// Quarter-width hlfp_small on 64x64 inputs.
ModelSpec build_tiny_hlfp(int k);

/// Keeps the trunk and only the branches (and superclass tiers) used by C.
ModelSpec apply_cutout(const ModelSpec& model, const CutoutSet& classes);

/// Notes about a spec that are not structural errors.
std::vector<std::string> report_flags(const ModelSpec& model);

struct Violation {
  std::string layer;
  std::string rule;
  std::string message;
};
std::vector<Violation> validate(const ModelSpec& model);

/// Throws ValidationError listing every violation.
void require_valid(const ModelSpec& model);

// ---------------------------------------------------------------------------
// Shapes and concrete layers

struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  bool operator==(const FeatureShape&) const = default;
};

enum class Tier { trunk, superclass, branch };
std::string_view tier_name(Tier t);

struct StageShape {
  std::string stage;
  Tier tier = Tier::trunk;
  int parallelism = 1;
  FeatureShape output;
};

/// Output shape of the stem conv, stem pool, every stage and the head.
/// Throws NumericError when some layer would produce a non-positive extent.
std::vector<StageShape> infer_shapes(const ModelSpec& model);

enum class LayerKind { conv, norm, linear };

struct LayerInfo {
  std::string name;   // relative to the owner, e.g. "conv2.0.conv1"
  std::string stage;  // "stem", "conv2", ..., "head"
  LayerKind kind = LayerKind::conv;
  ConvSpec conv;      // conv layers
  int channels = 0;   // norm layers
  int in_features = 0;
  int out_features = 0;
  FeatureShape output;

  std::int64_t params() const;
  std::int64_t macs() const;
};

/// Layers of one instance of a tier (the trunk, one superclass pipeline, or
/// one branch), including the head where it belongs to that tier.
std::vector<LayerInfo> tier_layers(const ModelSpec& model, Tier tier);

struct Owner {
  Tier tier = Tier::trunk;
  int index = 0;  // superclass j or class i; 0 for the trunk

  /// Tensor-name prefix: "trunk.", "super.<j>.", "branch.<i>.".
  std::string prefix() const;
  /// Report label: "trunk", "superclass-<j>", "branch-<i>".
  std::string label() const;
};

}  // namespace hlfp::arch
