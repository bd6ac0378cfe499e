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

#include "hlfp/arch_graph.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <numeric>
#include <set>
#include <sstream>

#include "hlfp/errors.hpp"

namespace hlfp::arch {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 9> kVariantNames{{
    {Variant::resnet18, "resnet18"},
    {Variant::resnet50, "resnet50"},
    {Variant::resnet152, "resnet152"},
    {Variant::hlfp_small, "hlfp_small"},
    {Variant::hlfp_big, "hlfp_big"},
    {Variant::hlfp_late_sp, "hlfp_late_sp"},
    {Variant::hlfp_late_big_sp, "hlfp_late_big_sp"},
    {Variant::hlfp_1b_late_sp, "hlfp_1b_late_sp"},
    {Variant::hlfp_nested, "hlfp_nested"},
}};

std::int64_t extent(std::int64_t in, int kernel, int stride, int pad) {
  const std::int64_t span = in + 2 * pad - kernel;
  if (span < 0 || stride < 1)
    throw NumericError("kernel " + std::to_string(kernel) + " (stride " + std::to_string(stride) +
                       ", pad " + std::to_string(pad) + ") yields non-positive output from extent " +
                       std::to_string(in));
  return span / stride + 1;
}

FeatureShape conv_shape(const ConvSpec& c, const FeatureShape& in) {
  return {c.out_channels, static_cast<int>(extent(in.height, c.kernel_h, c.stride, c.pad_h())),
          static_cast<int>(extent(in.width, c.kernel_w, c.stride, c.pad_w()))};
}

FeatureShape pool_shape(const PoolSpec& p, const FeatureShape& in) {
  return {in.channels, static_cast<int>(extent(in.height, p.window, p.stride, p.pad)),
          static_cast<int>(extent(in.width, p.window, p.stride, p.pad))};
}

int scaled(int channels, const BuildOptions& o) {
  if (o.width_divisor < 1 || channels % o.width_divisor != 0)
    throw ValidationError("width divisor " + std::to_string(o.width_divisor) +
                          " does not divide channel count " + std::to_string(channels));
  return channels / o.width_divisor;
}

StageSpec make_stage(std::string name, int in, int mid, int out, int stride, int reps, int par,
                     const BuildOptions& o, BlockKind kind = BlockKind::bottleneck) {
  return StageSpec{std::move(name),
                   make_block(scaled(in, o), scaled(mid, o), scaled(out, o), stride, kind), reps,
                   par};
}

ModelSpec base_model(Variant v, int k, const BuildOptions& o) {
  if (k < 1) throw ValidationError("number of classes must be >= 1");
  if (o.input_size < 1) throw ValidationError("input size must be >= 1");
  ModelSpec m;
  m.variant = v;
  m.name = std::string(variant_name(v));
  if (o.width_divisor != 1) m.name += "_d" + std::to_string(o.width_divisor);
  m.input = {3, o.input_size, o.input_size};
  m.num_classes = k;
  m.stem = ConvSpec{7, 7, 3, scaled(64, o), 2, 1, false};
  m.stem_pool = PoolSpec{3, 2, 1};
  m.active_classes.resize(static_cast<std::size_t>(k));
  std::iota(m.active_classes.begin(), m.active_classes.end(), 1);
  return m;
}

// Stem plus conv2/conv3 of the bottleneck residual network, shared by the
// 50-layer network and every HLFP variant.
void add_resnet50_front(ModelSpec& m, const BuildOptions& o) {
  m.trunk_stages.push_back(make_stage("conv2", 64, 64, 256, 1, 3, 1, o));
  m.trunk_stages.push_back(make_stage("conv3", 256, 128, 512, 2, 4, 1, o));
}

void append_block_layers(std::vector<LayerInfo>& out, const std::string& prefix,
                         const std::string& stage, const BottleneckSpec& b, FeatureShape& shape) {
  const FeatureShape in = shape;
  int idx = 1;
  for (const auto& c : b.main_path()) {
    shape = conv_shape(c, shape);
    LayerInfo conv;
    conv.name = prefix + "conv" + std::to_string(idx);
    conv.stage = stage;
    conv.kind = LayerKind::conv;
    conv.conv = c;
    conv.output = shape;
    out.push_back(conv);
    LayerInfo norm;
    norm.name = prefix + "bn" + std::to_string(idx);
    norm.stage = stage;
    norm.kind = LayerKind::norm;
    norm.channels = c.out_channels;
    norm.output = shape;
    out.push_back(norm);
    ++idx;
  }
  if (b.has_projection) {
    const ConvSpec p = b.projection();
    const FeatureShape ps = conv_shape(p, in);
    LayerInfo conv;
    conv.name = prefix + "proj.conv";
    conv.stage = stage;
    conv.kind = LayerKind::conv;
    conv.conv = p;
    conv.output = ps;
    out.push_back(conv);
    LayerInfo norm;
    norm.name = prefix + "proj.bn";
    norm.stage = stage;
    norm.kind = LayerKind::norm;
    norm.channels = p.out_channels;
    norm.output = ps;
    out.push_back(norm);
  }
}

void append_stage_layers(std::vector<LayerInfo>& out, const StageSpec& s, FeatureShape& shape) {
  for (int r = 0; r < s.reps; ++r)
    append_block_layers(out, s.name + "." + std::to_string(r) + ".", s.name, s.rep_block(r), shape);
}

LayerInfo head_layer(const ModelSpec& m, int out_features) {
  LayerInfo fc;
  fc.name = "head.fc";
  fc.stage = "head";
  fc.kind = LayerKind::linear;
  fc.in_features = m.head.in_features;
  fc.out_features = out_features;
  fc.output = {out_features, 1, 1};
  return fc;
}

FeatureShape trunk_output(const ModelSpec& m) {
  FeatureShape shape{m.input.channels, m.input.height, m.input.width};
  shape = pool_shape(m.stem_pool, conv_shape(m.stem, shape));
  for (const auto& s : m.trunk_stages)
    for (int r = 0; r < s.reps; ++r) {
      std::vector<LayerInfo> scratch;
      append_block_layers(scratch, "", s.name, s.rep_block(r), shape);
    }
  return shape;
}

FeatureShape run_stages(const std::vector<StageSpec>& stages, FeatureShape shape) {
  std::vector<LayerInfo> scratch;
  for (const auto& s : stages) append_stage_layers(scratch, s, shape);
  return shape;
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& [var, name] : kVariantNames)
    if (var == v) return name;
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  std::string norm(text);
  std::replace(norm.begin(), norm.end(), '-', '_');
  for (const auto& [var, name] : kVariantNames)
    if (name == norm) return var;
  throw ValidationError("unknown variant '" + std::string(text) + "'");
}

std::vector<Variant> all_variants() {
  std::vector<Variant> out;
  for (const auto& [var, name] : kVariantNames) out.push_back(var);
  return out;
}

std::int64_t ConvSpec::weight_count() const {
  return static_cast<std::int64_t>(kernel_h) * kernel_w * (in_channels / groups) * out_channels;
}

std::vector<ConvSpec> BottleneckSpec::main_path() const {
  if (kind == BlockKind::basic)
    return {ConvSpec{3, 3, in_channels, out_channels, stride, 1, false},
            ConvSpec{3, 3, out_channels, out_channels, 1, 1, false}};
  return {ConvSpec{1, 1, in_channels, mid_channels, 1, 1, false},
          ConvSpec{3, 3, mid_channels, mid_channels, stride, 1, false},
          ConvSpec{1, 1, mid_channels, out_channels, 1, 1, false}};
}

ConvSpec BottleneckSpec::projection() const {
  return ConvSpec{1, 1, in_channels, out_channels, stride, 1, false};
}

BottleneckSpec make_block(int in, int mid, int out, int stride, BlockKind kind) {
  if (kind == BlockKind::basic) mid = out;
  return BottleneckSpec{kind, in, mid, out, stride, stride != 1 || in != out};
}

BottleneckSpec StageSpec::rep_block(int rep) const {
  if (rep == 0) return block;
  return make_block(block.out_channels, block.mid_channels, block.out_channels, 1, block.kind);
}

int ModelSpec::num_superclasses() const {
  return superclass_stages.empty() ? 0 : superclass_stages.front().parallelism;
}

int ModelSpec::superclass_of(int cls) const {
  if (!superclass_map || cls < 1 || cls > static_cast<int>(superclass_map->size()))
    throw ValidationError("class " + std::to_string(cls) + " has no superclass");
  return (*superclass_map)[static_cast<std::size_t>(cls - 1)];
}

std::vector<int> ModelSpec::active_superclasses() const {
  if (!is_nested()) return {};
  std::set<int> used;
  for (int c : active_classes) used.insert(superclass_of(c));
  return {used.begin(), used.end()};
}

// --- CutoutSet --------------------------------------------------------------

CutoutSet CutoutSet::make(std::vector<int> classes, int k) {
  if (classes.empty()) throw ValidationError("cutout class set is empty");
  std::sort(classes.begin(), classes.end());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 1 || classes[i] > k)
      throw ValidationError("cutout class " + std::to_string(classes[i]) + " outside 1.." +
                            std::to_string(k));
    if (i && classes[i] == classes[i - 1])
      throw ValidationError("cutout class " + std::to_string(classes[i]) + " listed twice");
  }
  CutoutSet s;
  s.classes_ = std::move(classes);
  return s;
}

CutoutSet CutoutSet::parse(std::string_view text, int k) {
  auto to_int = [&](std::string_view tok) {
    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
    while (!tok.empty() && tok.back() == ' ') tok.remove_suffix(1);
    int v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || ptr != tok.data() + tok.size() || tok.empty())
      throw ValidationError("malformed class list '" + std::string(text) + "'");
    return v;
  };
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string_view item =
        text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    const std::size_t dash = item.find('-');
    if (dash == std::string_view::npos) {
      out.push_back(to_int(item));
    } else {
      const int lo = to_int(item.substr(0, dash));
      const int hi = to_int(item.substr(dash + 1));
      if (hi < lo) throw ValidationError("descending class range '" + std::string(item) + "'");
      for (int c = lo; c <= hi; ++c) out.push_back(c);
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return make(std::move(out), k);
}

CutoutSet CutoutSet::full(int k) {
  std::vector<int> all(static_cast<std::size_t>(k));
  std::iota(all.begin(), all.end(), 1);
  return make(std::move(all), k);
}

bool CutoutSet::contains(int cls) const {
  return std::binary_search(classes_.begin(), classes_.end(), cls);
}

std::string CutoutSet::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < classes_.size();) {
    std::size_t j = i;
    while (j + 1 < classes_.size() && classes_[j + 1] == classes_[j] + 1) ++j;
    if (i) os << ',';
    os << classes_[i];
    if (j > i) os << '-' << classes_[j];
    i = j + 1;
  }
  return os.str();
}

// --- builders ---------------------------------------------------------------

ModelSpec build_resnet(int depth, int k, const BuildOptions& o) {
  Variant v;
  std::array<int, 4> reps{};
  switch (depth) {
    case 18: v = Variant::resnet18; reps = {2, 2, 2, 2}; break;
    case 50: v = Variant::resnet50; reps = {3, 4, 6, 3}; break;
    case 152: v = Variant::resnet152; reps = {3, 8, 36, 3}; break;
    default:
      throw ValidationError("unsupported residual network depth " + std::to_string(depth) +
                            " (supported: 18, 50, 152)");
  }
  ModelSpec m = base_model(v, k, o);
  if (depth == 18) {
    const auto basic = BlockKind::basic;
    m.trunk_stages.push_back(make_stage("conv2", 64, 64, 64, 1, reps[0], 1, o, basic));
    m.trunk_stages.push_back(make_stage("conv3", 64, 128, 128, 2, reps[1], 1, o, basic));
    m.trunk_stages.push_back(make_stage("conv4", 128, 256, 256, 2, reps[2], 1, o, basic));
    m.trunk_stages.push_back(make_stage("conv5", 256, 512, 512, 2, reps[3], 1, o, basic));
    m.head = {HeadKind::shared, scaled(512, o)};
  } else {
    m.trunk_stages.push_back(make_stage("conv2", 64, 64, 256, 1, reps[0], 1, o));
    m.trunk_stages.push_back(make_stage("conv3", 256, 128, 512, 2, reps[1], 1, o));
    m.trunk_stages.push_back(make_stage("conv4", 512, 256, 1024, 2, reps[2], 1, o));
    m.trunk_stages.push_back(make_stage("conv5", 1024, 512, 2048, 2, reps[3], 1, o));
    m.head = {HeadKind::shared, scaled(2048, o)};
  }
  return m;
}

ModelSpec build_hlfp(Variant variant, int k, const BuildOptions& o) {
  ModelSpec m = base_model(variant, k, o);
  add_resnet50_front(m, o);
  auto& br = m.branch_stages;
  switch (variant) {
    case Variant::hlfp_small:
      br.push_back(make_stage("conv4", 512, 128, 512, 2, 1, k, o));
      br.push_back(make_stage("conv5", 512, 64, 256, 2, 1, k, o));
      br.push_back(make_stage("conv6", 256, 32, 128, 2, 1, k, o));
      m.head = {HeadKind::per_branch, scaled(128, o)};
      break;
    case Variant::hlfp_big:
      br.push_back(make_stage("conv4", 512, 256, 1024, 2, 1, k, o));
      br.push_back(make_stage("conv5", 1024, 128, 512, 2, 1, k, o));
      br.push_back(make_stage("conv6", 512, 64, 256, 2, 1, k, o));
      m.head = {HeadKind::per_branch, scaled(256, o)};
      break;
    case Variant::hlfp_late_sp:
      m.trunk_stages.push_back(make_stage("conv4", 512, 256, 1024, 2, 6, 1, o));
      br.push_back(make_stage("conv5", 1024, 128, 512, 2, 1, k, o));
      br.push_back(make_stage("conv6", 512, 64, 256, 2, 1, k, o));
      br.push_back(make_stage("conv7", 256, 32, 128, 2, 1, k, o));
      m.head = {HeadKind::per_branch, scaled(128, o)};
      break;
    case Variant::hlfp_late_big_sp:
      // Split-point stage at twice the late-SP widths.
      m.trunk_stages.push_back(make_stage("conv4", 512, 256, 1024, 2, 6, 1, o));
      br.push_back(make_stage("conv5", 1024, 256, 1024, 2, 1, k, o));
      br.push_back(make_stage("conv6", 1024, 64, 256, 2, 1, k, o));
      br.push_back(make_stage("conv7", 256, 32, 128, 2, 1, k, o));
      m.head = {HeadKind::per_branch, scaled(128, o)};
      break;
    case Variant::hlfp_1b_late_sp:
      // One branch body, evaluated serially, with a k-way head.
      m.trunk_stages.push_back(make_stage("conv4", 512, 256, 1024, 2, 6, 1, o));
      m.trunk_stages.push_back(make_stage("conv5", 1024, 128, 512, 2, 1, 1, o));
      m.trunk_stages.push_back(make_stage("conv6", 512, 64, 256, 2, 1, 1, o));
      m.trunk_stages.push_back(make_stage("conv7", 256, 32, 128, 2, 1, 1, o));
      m.head = {HeadKind::shared, scaled(128, o)};
      break;
    case Variant::hlfp_nested:
      throw ValidationError("hlfp_nested needs a superclass map; use build_hlfp_nested");
    default:
      throw ValidationError("variant " + std::string(variant_name(variant)) +
                            " is not an HLFP variant");
  }
  return m;
}

ModelSpec build_hlfp_nested(int k, const SuperclassMap& map, const BuildOptions& o) {
  if (static_cast<int>(map.size()) != k)
    throw ValidationError("superclass map covers " + std::to_string(map.size()) +
                          " classes, expected " + std::to_string(k));
  const int s = map.empty() ? 0 : *std::max_element(map.begin(), map.end());
  std::vector<int> members(static_cast<std::size_t>(s + 1), 0);
  for (std::size_t c = 0; c < map.size(); ++c) {
    if (map[c] < 1)
      throw ValidationError("class " + std::to_string(c + 1) + " mapped to missing superclass " +
                            std::to_string(map[c]));
    ++members[static_cast<std::size_t>(map[c])];
  }
  for (int j = 1; j <= s; ++j)
    if (members[static_cast<std::size_t>(j)] == 0)
      throw ValidationError("superclass " + std::to_string(j) + " is empty");

  ModelSpec m = base_model(Variant::hlfp_nested, k, o);
  add_resnet50_front(m, o);
  // Second split-point sits after conv4: conv4 is shared per superclass,
  // conv5/conv6 and the head are private to each class.
  m.superclass_stages.push_back(make_stage("conv4", 512, 128, 512, 2, 1, s, o));
  m.branch_stages.push_back(make_stage("conv5", 512, 64, 256, 2, 1, k, o));
  m.branch_stages.push_back(make_stage("conv6", 256, 32, 128, 2, 1, k, o));
  m.head = {HeadKind::per_branch, scaled(128, o)};
  m.superclass_map = map;
  return m;
}

ModelSpec build_model(Variant variant, int k, const BuildOptions& o,
                      const std::optional<SuperclassMap>& map) {
  switch (variant) {
    case Variant::resnet18: return build_resnet(18, k, o);
    case Variant::resnet50: return build_resnet(50, k, o);
    case Variant::resnet152: return build_resnet(152, k, o);
    case Variant::hlfp_nested:
      if (!map) throw ValidationError("hlfp_nested requires a superclass map");
      return build_hlfp_nested(k, *map, o);
    default: return build_hlfp(variant, k, o);
  }
}

ModelSpec build_tiny_hlfp(int k) {
  return build_hlfp(Variant::hlfp_small, k, BuildOptions{4, 64});
}

ModelSpec apply_cutout(const ModelSpec& model, const CutoutSet& classes) {
  if (!model.has_branches())
    throw ValidationError("cutout of serial model '" + model.name +
                          "' is unsupported: it has no class branches and must be retrained");
  for (int c : classes.classes()) {
    if (c > model.num_classes)
      throw ValidationError("cutout class " + std::to_string(c) + " exceeds k=" +
                            std::to_string(model.num_classes));
    if (!std::binary_search(model.active_classes.begin(), model.active_classes.end(), c))
      throw ValidationError("cutout class " + std::to_string(c) + " is not present in model '" +
                            model.name + "'");
  }
  ModelSpec out = model;
  out.active_classes = classes.classes();
  return out;
}

std::vector<std::string> report_flags(const ModelSpec& model) {
  std::vector<std::string> flags;
  if (model.variant == Variant::hlfp_late_big_sp && model.num_classes >= 1000)
    flags.emplace_back("cost exceeds report threshold");
  return flags;
}

// --- validation -------------------------------------------------------------

namespace {

struct StageRef {
  const StageSpec* stage;
  Tier tier;
};

void check_conv(std::vector<Violation>& v, const std::string& layer, const ConvSpec& c) {
  if (c.kernel_h < 1 || c.kernel_w < 1 || c.in_channels < 1 || c.out_channels < 1 ||
      c.stride < 1 || c.groups < 1) {
    v.push_back({layer, "conv counts", "all conv counts must be >= 1"});
    return;
  }
  if (c.in_channels % c.groups || c.out_channels % c.groups)
    v.push_back({layer, "conv groups",
                 "channels " + std::to_string(c.in_channels) + "->" +
                     std::to_string(c.out_channels) + " not divisible by groups " +
                     std::to_string(c.groups)});
}

}  // namespace

std::vector<Violation> validate(const ModelSpec& m) {
  std::vector<Violation> v;
  const int k = m.num_classes;
  if (k < 1) v.push_back({"model", "classes", "number of classes must be >= 1"});

  if (m.input.channels < 1 || m.input.height < 1 || m.input.width < 1)
    v.push_back({"input", "shape", "input dimensions must be >= 1"});
  check_conv(v, "stem.conv", m.stem);
  if (m.stem.in_channels != m.input.channels)
    v.push_back({"stem.conv", "channel chain",
                 "stem expects " + std::to_string(m.stem.in_channels) + " channels, input has " +
                     std::to_string(m.input.channels)});

  std::vector<StageRef> seq;
  for (const auto& s : m.trunk_stages) seq.push_back({&s, Tier::trunk});
  for (const auto& s : m.superclass_stages) seq.push_back({&s, Tier::superclass});
  for (const auto& s : m.branch_stages) seq.push_back({&s, Tier::branch});

  int channels = m.stem.out_channels;
  std::vector<std::string> splits;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const StageSpec& s = *seq[i].stage;
    const BottleneckSpec& b = s.block;
    if (s.reps < 1) v.push_back({s.name, "reps", "reps must be >= 1"});
    if (s.parallelism < 1) v.push_back({s.name, "parallelism", "parallelism must be >= 1"});
    const bool needs_proj = b.stride != 1 || b.in_channels != b.out_channels;
    if (b.has_projection != needs_proj)
      v.push_back({s.name, "projection",
                   needs_proj ? "stride or channel change requires a projection shortcut"
                              : "projection shortcut present without stride/channel change"});
    for (const auto& c : b.main_path()) check_conv(v, s.name, c);
    if (b.has_projection) check_conv(v, s.name + ".proj", b.projection());

    bool split = false;
    if (i > 0) {
      const StageRef& prev = seq[i - 1];
      if (s.parallelism < prev.stage->parallelism)
        v.push_back({s.name, "fan-in",
                     "parallelism drops from " + std::to_string(prev.stage->parallelism) +
                         " to " + std::to_string(s.parallelism)});
      split = s.parallelism > prev.stage->parallelism || prev.tier != seq[i].tier;
    } else {
      split = s.parallelism > 1 || seq[i].tier != Tier::trunk;
    }
    if (seq[i].tier == Tier::trunk && s.parallelism != 1)
      v.push_back({s.name, "parallelism", "trunk stages must be serial"});
    if (split) splits.push_back(i > 0 ? seq[i - 1].stage->name + "->" + s.name : "stem->" + s.name);

    if (b.in_channels != channels) {
      if (split)
        v.push_back({s.name, "split-point fan-out",
                     "stage expects " + std::to_string(b.in_channels) +
                         " input channels but the split-point delivers " +
                         std::to_string(channels) + " channels to each branch of its 1:" +
                         std::to_string(s.parallelism) + " fan-out"});
      else
        v.push_back({s.name, "channel chain",
                     "stage expects " + std::to_string(b.in_channels) + " input channels, got " +
                         std::to_string(channels)});
    }
    channels = b.out_channels;
  }

  const std::size_t expected_splits = m.is_nested() ? 2 : (m.has_branches() ? 1 : 0);
  if (splits.size() != expected_splits) {
    std::string where;
    for (const auto& sp : splits) where += (where.empty() ? "" : ", ") + sp;
    v.push_back({where.empty() ? "model" : where, "split-point",
                 "found " + std::to_string(splits.size()) + " split-point(s), expected " +
                     std::to_string(expected_splits)});
  }

  if (m.has_branches()) {
    if (m.branch_stages.empty()) {
      v.push_back({"head", "head", "per-branch head without branch stages"});
    } else if (m.branch_stages.back().parallelism != k) {
      v.push_back({m.branch_stages.back().name, "branch count",
                   "terminal parallelism " + std::to_string(m.branch_stages.back().parallelism) +
                       " differs from k=" + std::to_string(k)});
    }
  } else if (!m.branch_stages.empty() || !m.superclass_stages.empty()) {
    v.push_back({"head", "head", "shared head with parallel stages"});
  }
  if (m.head.in_features != channels)
    v.push_back({"head.fc", "channel chain",
                 "head expects " + std::to_string(m.head.in_features) + " features, got " +
                     std::to_string(channels)});

  // Active classes.
  if (m.active_classes.empty()) {
    v.push_back({"model", "active classes", "no active classes"});
  } else {
    for (std::size_t i = 0; i < m.active_classes.size(); ++i) {
      const int c = m.active_classes[i];
      if (c < 1 || c > k || (i && c <= m.active_classes[i - 1])) {
        v.push_back({"model", "active classes",
                     "active classes must be strictly increasing within 1.." + std::to_string(k)});
        break;
      }
    }
    if (!m.has_branches() && static_cast<int>(m.active_classes.size()) != k)
      v.push_back({"model", "active classes", "serial models cannot be cut out"});
  }

  // Superclass map.
  if (m.is_nested()) {
    const int s = m.num_superclasses();
    if (!m.superclass_map) {
      v.push_back({"superclass_map", "superclass map", "nested model without superclass map"});
    } else {
      const auto& map = *m.superclass_map;
      if (static_cast<int>(map.size()) != k)
        v.push_back({"superclass_map", "superclass map",
                     "map covers " + std::to_string(map.size()) + " classes, expected " +
                         std::to_string(k)});
      std::vector<int> members(static_cast<std::size_t>(std::max(s, 0) + 1), 0);
      for (std::size_t c = 0; c < map.size(); ++c) {
        if (map[c] < 1 || map[c] > s)
          v.push_back({"superclass_map", "superclass map",
                       "class " + std::to_string(c + 1) + " mapped to missing superclass " +
                           std::to_string(map[c])});
        else
          ++members[static_cast<std::size_t>(map[c])];
      }
      for (int j = 1; j <= s; ++j)
        if (members[static_cast<std::size_t>(j)] == 0)
          v.push_back({"superclass_map", "superclass map",
                       "superclass " + std::to_string(j) + " has no classes"});
    }
  } else if (m.superclass_map) {
    v.push_back({"superclass_map", "superclass map", "superclass map without superclass tier"});
  }

  if (v.empty()) {
    try {
      (void)infer_shapes(m);
    } catch (const NumericError& e) {
      v.push_back({"model", "shape", e.what()});
    }
  }
  return v;
}

void require_valid(const ModelSpec& model) {
  const auto v = validate(model);
  if (v.empty()) return;
  std::string msg = "model '" + model.name + "' is invalid:";
  for (const auto& x : v) msg += "\n  " + x.layer + " [" + x.rule + "]: " + x.message;
  throw ValidationError(msg);
}

// --- shapes and layers ------------------------------------------------------

std::string_view tier_name(Tier t) {
  switch (t) {
    case Tier::trunk: return "trunk";
    case Tier::superclass: return "superclass";
    case Tier::branch: return "branch";
  }
  return "?";
}

std::vector<StageShape> infer_shapes(const ModelSpec& m) {
  std::vector<StageShape> out;
  FeatureShape shape{m.input.channels, m.input.height, m.input.width};
  out.push_back({"input", Tier::trunk, 1, shape});
  shape = conv_shape(m.stem, shape);
  out.push_back({"stem.conv", Tier::trunk, 1, shape});
  shape = pool_shape(m.stem_pool, shape);
  out.push_back({"stem.pool", Tier::trunk, 1, shape});
  auto walk = [&](const std::vector<StageSpec>& stages, Tier tier) {
    for (const auto& s : stages) {
      shape = run_stages({s}, shape);
      out.push_back({s.name, tier, s.parallelism, shape});
    }
  };
  walk(m.trunk_stages, Tier::trunk);
  walk(m.superclass_stages, Tier::superclass);
  walk(m.branch_stages, Tier::branch);
  if (m.has_branches())
    out.push_back({"head", Tier::branch, m.num_classes, {1, 1, 1}});
  else
    out.push_back({"head", Tier::trunk, 1, {m.num_classes, 1, 1}});
  return out;
}

std::int64_t LayerInfo::params() const {
  switch (kind) {
    case LayerKind::conv: return conv.weight_count() + (conv.has_bias ? conv.out_channels : 0);
    case LayerKind::norm: return 2 * static_cast<std::int64_t>(channels);
    case LayerKind::linear:
      return static_cast<std::int64_t>(in_features) * out_features + out_features;
  }
  return 0;
}

std::int64_t LayerInfo::macs() const {
  switch (kind) {
    case LayerKind::conv:
      return conv.weight_count() * static_cast<std::int64_t>(output.height) * output.width;
    case LayerKind::norm: return 0;
    case LayerKind::linear: return static_cast<std::int64_t>(in_features) * out_features;
  }
  return 0;
}

std::vector<LayerInfo> tier_layers(const ModelSpec& m, Tier tier) {
  std::vector<LayerInfo> out;
  if (tier == Tier::trunk) {
    FeatureShape shape{m.input.channels, m.input.height, m.input.width};
    shape = conv_shape(m.stem, shape);
    LayerInfo conv;
    conv.name = "stem.conv";
    conv.stage = "stem";
    conv.kind = LayerKind::conv;
    conv.conv = m.stem;
    conv.output = shape;
    out.push_back(conv);
    LayerInfo norm;
    norm.name = "stem.bn";
    norm.stage = "stem";
    norm.kind = LayerKind::norm;
    norm.channels = m.stem.out_channels;
    norm.output = shape;
    out.push_back(norm);
    shape = pool_shape(m.stem_pool, shape);
    for (const auto& s : m.trunk_stages) append_stage_layers(out, s, shape);
    if (m.head.kind == HeadKind::shared) out.push_back(head_layer(m, m.num_classes));
    return out;
  }
  FeatureShape shape = trunk_output(m);
  if (tier == Tier::superclass) {
    for (const auto& s : m.superclass_stages) append_stage_layers(out, s, shape);
    return out;
  }
  if (!m.has_branches()) return out;
  shape = run_stages(m.superclass_stages, shape);
  for (const auto& s : m.branch_stages) append_stage_layers(out, s, shape);
  out.push_back(head_layer(m, 1));
  return out;
}

std::string Owner::prefix() const {
  switch (tier) {
    case Tier::trunk: return "trunk.";
    case Tier::superclass: return "super." + std::to_string(index) + ".";
    case Tier::branch: return "branch." + std::to_string(index) + ".";
  }
  return "";
}

std::string Owner::label() const {
  switch (tier) {
    case Tier::trunk: return "trunk";
    case Tier::superclass: return "superclass-" + std::to_string(index);
    case Tier::branch: return "branch-" + std::to_string(index);
  }
  return "";
}

}  // namespace hlfp::arch
