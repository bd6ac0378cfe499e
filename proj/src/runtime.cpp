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

#include "hlfp/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "hlfp/errors.hpp"
#include "hlfp/ops.hpp"

namespace hlfp::runtime {

using arch::LayerKind;
using arch::ModelSpec;
using arch::Owner;
using arch::Tier;
using autograd::Variable;

namespace {

enum class InitKind { conv_weight, linear_weight, zeros, ones };

struct Planned {
  TensorSpec spec;
  InitKind init;
};

void plan_owner(std::vector<Planned>& out, const ModelSpec& m, Tier tier, int index) {
  const std::string prefix = Owner{tier, index}.prefix();
  for (const auto& l : arch::tier_layers(m, tier)) {
    const std::string base = prefix + l.name;
    switch (l.kind) {
      case LayerKind::conv: {
        const auto& c = l.conv;
        out.push_back({{base + ".weight",
                        {c.out_channels, c.in_channels / c.groups, c.kernel_h, c.kernel_w}},
                       InitKind::conv_weight});
        if (c.has_bias) out.push_back({{base + ".bias", {c.out_channels}}, InitKind::zeros});
        break;
      }
      case LayerKind::norm:
        out.push_back({{base + ".weight", {l.channels}}, InitKind::ones});
        out.push_back({{base + ".bias", {l.channels}}, InitKind::zeros});
        out.push_back({{base + ".running_mean", {l.channels}, false}, InitKind::zeros});
        out.push_back({{base + ".running_var", {l.channels}, false}, InitKind::ones});
        break;
      case LayerKind::linear:
        out.push_back({{base + ".weight", {l.out_features, l.in_features}}, InitKind::linear_weight});
        out.push_back({{base + ".bias", {l.out_features}}, InitKind::zeros});
        break;
    }
  }
}

std::vector<Planned> plan(const ModelSpec& m) {
  arch::require_valid(m);
  std::vector<Planned> out;
  plan_owner(out, m, Tier::trunk, 0);
  for (int j : m.active_superclasses()) plan_owner(out, m, Tier::superclass, j);
  if (m.has_branches())
    for (int i : m.active_classes) plan_owner(out, m, Tier::branch, i);
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Tensor init_tensor(const Planned& p, std::uint64_t seed) {
  Tensor t(p.spec.shape);
  switch (p.init) {
    case InitKind::zeros: return t;
    case InitKind::ones: t.fill(1.0f); return t;
    case InitKind::conv_weight:
    case InitKind::linear_weight: break;
  }
  std::int64_t fan_in = 1;
  for (std::size_t d = 1; d < p.spec.shape.size(); ++d) fan_in *= p.spec.shape[d];
  const double gain = p.init == InitKind::conv_weight ? 2.0 : 1.0;
  const auto h = fnv1a(p.spec.name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

const ParamStore& store(const Context& ctx) { return ctx.train ? *ctx.train : *ctx.params; }

Variable param(const Context& ctx, const std::string& name) {
  if (ctx.train) return autograd::parameter(ctx.train->value(name), &ctx.train->grad(name));
  return autograd::parameter(ctx.params->value(name), nullptr);
}

Variable conv(const Context& ctx, const std::string& name, const arch::ConvSpec& c,
              const Variable& x) {
  const ops::Conv2dParams p{c.stride, c.kernel_h / 2, c.kernel_w / 2, c.groups};
  const Variable w = param(ctx, name + ".weight");
  if (c.has_bias) {
    const Variable b = param(ctx, name + ".bias");
    return autograd::conv2d(ctx.tape, x, w, &b, p);
  }
  return autograd::conv2d(ctx.tape, x, w, nullptr, p);
}

Variable norm(const Context& ctx, const std::string& name, const Variable& x) {
  const Variable g = param(ctx, name + ".weight");
  const Variable b = param(ctx, name + ".bias");
  if (ctx.train)
    return autograd::batchnorm_train(ctx.tape, x, g, b,
                                     ctx.train->mutable_value(name + ".running_mean"),
                                     ctx.train->mutable_value(name + ".running_var"));
  const auto& s = store(ctx);
  return autograd::batchnorm_infer(ctx.tape, x, g, b, s.value(name + ".running_mean"),
                                   s.value(name + ".running_var"));
}

Variable block(const Context& ctx, const std::string& prefix, const arch::BottleneckSpec& b,
               const Variable& x) {
  const auto path = b.main_path();
  Variable y = x;
  for (std::size_t i = 0; i < path.size(); ++i) {
    const auto idx = std::to_string(i + 1);
    y = norm(ctx, prefix + "bn" + idx, conv(ctx, prefix + "conv" + idx, path[i], y));
    if (i + 1 < path.size()) y = autograd::relu(ctx.tape, y);
  }
  Variable shortcut = x;
  if (b.has_projection)
    shortcut = norm(ctx, prefix + "proj.bn", conv(ctx, prefix + "proj.conv", b.projection(), x));
  return autograd::relu(ctx.tape, autograd::add(ctx.tape, y, shortcut));
}

Variable stage(const Context& ctx, const std::string& prefix, const arch::StageSpec& s,
               Variable x) {
  for (int r = 0; r < s.reps; ++r)
    x = block(ctx, prefix + s.name + "." + std::to_string(r) + ".", s.rep_block(r), x);
  return x;
}

Variable head(const Context& ctx, const std::string& prefix, const Variable& x) {
  const Variable pooled = autograd::global_avgpool(ctx.tape, x);
  return autograd::linear(ctx.tape, pooled, param(ctx, prefix + "head.fc.weight"),
                          param(ctx, prefix + "head.fc.bias"));
}

Logits run(const ModelSpec& m, const ParamStore& params, const Tensor& x,
           const std::vector<int>& classes, std::span<const AttentionDirective> attention,
           Trace* trace) {
  check_params(m, params);
  check_input(m, x);
  check_classes(m, classes);
  Context ctx{&m, &params, nullptr, nullptr};
  Variable out = forward_classes(ctx, autograd::constant(x), classes, attention, trace);
  return Logits{classes, out.value()};
}

}  // namespace

void check_input(const ModelSpec& m, const Tensor& x) {
  const auto& in = m.input;
  if (x.rank() != 4 || x.dim(1) != in.channels || x.dim(2) != in.height || x.dim(3) != in.width)
    throw ValidationError("input shape " + shape_str(x.shape()) + " does not match model input [N," +
                          std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                          std::to_string(in.width) + "]");
}

void check_classes(const ModelSpec& m, const std::vector<int>& classes) {
  if (classes.empty()) throw ValidationError("class subset is empty");
  for (int c : classes)
    if (std::find(m.active_classes.begin(), m.active_classes.end(), c) == m.active_classes.end())
      throw ValidationError("class " + std::to_string(c) + " is not active in model '" + m.name +
                            "'");
}

std::size_t Logits::column_of(int cls) const {
  auto it = std::find(classes.begin(), classes.end(), cls);
  if (it == classes.end())
    throw ValidationError("class " + std::to_string(cls) + " has no logit column");
  return static_cast<std::size_t>(it - classes.begin());
}

ParamStore init_params(const ModelSpec& model, std::uint64_t seed) {
  ParamStore store;
  for (const auto& p : plan(model)) {
    if (p.spec.parameter)
      store.add_parameter(p.spec.name, init_tensor(p, seed));
    else
      store.add_buffer(p.spec.name, init_tensor(p, seed));
  }
  return store;
}

std::vector<TensorSpec> expected_tensors(const ModelSpec& model) {
  std::vector<TensorSpec> out;
  for (auto& p : plan(model)) out.push_back(std::move(p.spec));
  return out;
}

void check_params(const ModelSpec& model, const ParamStore& params) {
  for (const auto& t : expected_tensors(model)) {
    if (!params.contains(t.name)) throw ValidationError("missing parameter tensor: " + t.name);
    const auto& v = params.value(t.name);
    if (v.shape() != t.shape)
      throw ValidationError("parameter tensor " + t.name + " has shape " + shape_str(v.shape()) +
                            ", expected " + shape_str(t.shape));
  }
}

Variable trunk_forward(const Context& ctx, const Variable& x) {
  const ModelSpec& m = *ctx.model;
  const std::string prefix = Owner{Tier::trunk, 0}.prefix();
  Variable y = norm(ctx, prefix + "stem.bn", conv(ctx, prefix + "stem.conv", m.stem, x));
  y = autograd::relu(ctx.tape, y);
  y = autograd::maxpool(ctx.tape, y, {m.stem_pool.window, m.stem_pool.stride, m.stem_pool.pad});
  for (const auto& s : m.trunk_stages) y = stage(ctx, prefix, s, y);
  if (m.head.kind == arch::HeadKind::shared) y = head(ctx, prefix, y);
  return y;
}

Variable superclass_forward(const Context& ctx, int superclass, const Variable& features) {
  const std::string prefix = Owner{Tier::superclass, superclass}.prefix();
  Variable y = features;
  for (const auto& s : ctx.model->superclass_stages) y = stage(ctx, prefix, s, y);
  return y;
}

Variable branch_forward(const Context& ctx, int cls, const Variable& features,
                        const AttentionDirective* attention) {
  const std::string prefix = Owner{Tier::branch, cls}.prefix();
  const bool attend = attention && attention->target_class == cls;
  Variable y = features;
  for (const auto& s : ctx.model->branch_stages) {
    y = stage(ctx, prefix, s, y);
    if (attend && s.name == attention->stage) y = autograd::scale(ctx.tape, y, attention->gain);
  }
  return head(ctx, prefix, y);
}

Variable forward_classes(const Context& ctx, const Variable& x, const std::vector<int>& classes,
                         std::span<const AttentionDirective> attention, Trace* trace) {
  const ModelSpec& m = *ctx.model;
  check_attention(m, attention);
  const Variable features = trunk_forward(ctx, x);
  if (trace) ++trace->trunk_runs;

  if (!m.has_branches()) {
    if (classes != m.active_classes)
      throw ValidationError("serial model '" + m.name + "' cannot evaluate a class subset");
    return features;
  }

  std::map<int, Variable> supers;
  if (m.is_nested()) {
    for (int c : classes) supers.emplace(m.superclass_of(c), Variable{});
    for (auto& [j, v] : supers) {
      v = superclass_forward(ctx, j, features);
      if (trace) trace->superclasses.push_back(j);
    }
  }

  std::vector<Variable> cols;
  cols.reserve(classes.size());
  for (int c : classes) {
    const Variable& in = m.is_nested() ? supers.at(m.superclass_of(c)) : features;
    auto d = std::find_if(attention.begin(), attention.end(),
                          [c](const AttentionDirective& a) { return a.target_class == c; });
    cols.push_back(branch_forward(ctx, c, in, d == attention.end() ? nullptr : &*d));
    if (trace) trace->branches.push_back(c);
  }
  return autograd::concat_columns(ctx.tape, cols);
}

Logits forward_full(const ModelSpec& model, const ParamStore& params, const Tensor& x,
                    Trace* trace) {
  return run(model, params, x, model.active_classes, {}, trace);
}

Logits forward_cutout(const ModelSpec& model, const ParamStore& params, const Tensor& x,
                      const arch::CutoutSet& classes, Trace* trace) {
  if (!model.has_branches())
    throw ValidationError("serial model '" + model.name + "' cannot be cut out");
  return run(model, params, x, classes.classes(), {}, trace);
}

Logits apply_attention(const ModelSpec& model, const ParamStore& params, const Tensor& x,
                       const AttentionDirective& directive) {
  return run(model, params, x, model.active_classes, {&directive, 1}, nullptr);
}

Logits apply_attention_pairs(const ModelSpec& model, const ParamStore& params, const Tensor& x,
                             std::span<const AttentionDirective> directives) {
  return run(model, params, x, model.active_classes, directives, nullptr);
}

void check_attention(const ModelSpec& model, std::span<const AttentionDirective> directives) {
  for (std::size_t i = 0; i < directives.size(); ++i) {
    check_attention(model, directives[i]);
    for (std::size_t j = 0; j < i; ++j)
      if (directives[j].target_class == directives[i].target_class)
        throw ValidationError("class " + std::to_string(directives[i].target_class) +
                              " has more than one attention directive");
  }
}

void check_attention(const ModelSpec& model, const AttentionDirective& d) {
  if (!model.has_branches())
    throw ValidationError("attention needs a branched model; '" + model.name + "' is serial");
  if (!std::isfinite(d.gain) || d.gain < 0.0f)
    throw ValidationError("attention gain must be finite and non-negative");
  if (std::find(model.active_classes.begin(), model.active_classes.end(), d.target_class) ==
      model.active_classes.end())
    throw ValidationError("attention target class " + std::to_string(d.target_class) +
                          " is not active in model '" + model.name + "'");
  const auto& st = model.branch_stages;
  if (std::none_of(st.begin(), st.end(), [&](const auto& s) { return s.name == d.stage; }))
    throw ValidationError("attention stage '" + d.stage + "' is not a branch stage of '" +
                          model.name + "'");
}

Tensor subset_softmax(const Logits& logits, SoftmaxSign sign) {
  for (float v : logits.values.data())
    if (!std::isfinite(v)) throw NumericError("non-finite logit in softmax input");
  return ops::softmax(logits.values, static_cast<int>(sign));
}

Logits restrict_to(const Logits& logits, const std::vector<int>& classes) {
  const std::int64_t n = logits.values.dim(0);
  const std::int64_t k = logits.values.dim(1);
  std::vector<std::size_t> cols;
  for (int c : classes) cols.push_back(logits.column_of(c));
  Tensor out({n, static_cast<std::int64_t>(classes.size())});
  for (std::int64_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      out[static_cast<std::size_t>(r) * cols.size() + c] =
          logits.values[static_cast<std::size_t>(r * k) + cols[c]];
  return Logits{classes, std::move(out)};
}

std::vector<int> argmax_classes(const Logits& logits) {
  const std::int64_t n = logits.values.dim(0);
  const std::int64_t k = logits.values.dim(1);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < k; ++c)
      if (logits.values[static_cast<std::size_t>(r * k + c)] >
          logits.values[static_cast<std::size_t>(r * k + best)])
        best = c;
    out.push_back(logits.classes[static_cast<std::size_t>(best)]);
  }
  return out;
}

}  // namespace hlfp::runtime
