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

// Executes a ModelSpec over a ParamStore: trunk once, then superclass tiers
// and class branches, each branch emitting one logit.
//
// Tensor names: "<owner prefix><layer>.<suffix>", where the owner prefix is
// "trunk.", "super.<j>." or "branch.<i>.", the layer is the name reported by
// tier_layers, and the suffix is weight/bias for conv and linear layers and
// weight/bias/running_mean/running_var for normalization layers.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hlfp/arch_graph.hpp"
#include "hlfp/autograd.hpp"
#include "hlfp/param_store.hpp"
#include "hlfp/tensor.hpp"

namespace hlfp::runtime {

/// Logit values [N, |classes|]; column c belongs to classes[c].
struct Logits {
  std::vector<int> classes;
  Tensor values;

  std::size_t column_of(int cls) const;  // throws ValidationError if absent
};

struct AttentionDirective {
  int target_class = 1;
  float gain = 1.0f;
  std::string stage = "conv5";
};

enum class SoftmaxSign { positive = +1, negative = -1 };

/// He (fan-in) normal conv and linear weights, unit gamma, zero beta,
/// running mean 0 and variance 1. Every tensor draws from its own stream
/// seeded by (seed, name), so a cutout spec initializes to the same values
/// as the corresponding part of the full spec.
ParamStore init_params(const arch::ModelSpec& model, std::uint64_t seed);

/// Names and shapes of the tensors the active parts of `model` read.
struct TensorSpec {
  std::string name;
  Shape shape;
  bool parameter = true;
};
std::vector<TensorSpec> expected_tensors(const arch::ModelSpec& model);

/// Throws ValidationError naming the first missing or misshapen tensor.
void check_params(const arch::ModelSpec& model, const ParamStore& params);

/// Which components ran during a forward.
struct Trace {
  int trunk_runs = 0;
  std::vector<int> superclasses;
  std::vector<int> branches;
};

/// One forward over a model. With `train` set, normalization uses batch
/// statistics, running statistics in `train` are updated and parameter
/// gradients are routed into it; otherwise `params` is only read and no
/// state is touched, so contexts may be used concurrently.
struct Context {
  const arch::ModelSpec* model = nullptr;
  const ParamStore* params = nullptr;
  ParamStore* train = nullptr;
  autograd::Tape* tape = nullptr;
};

/// Serial models: returns the [N,k] output of the shared head.
/// Branched models: returns the trunk feature map.
autograd::Variable trunk_forward(const Context& ctx, const autograd::Variable& x);
autograd::Variable superclass_forward(const Context& ctx, int superclass,
                                      const autograd::Variable& features);
/// [N,1] logit of class `cls`. `attention` applies only when it targets cls.
autograd::Variable branch_forward(const Context& ctx, int cls, const autograd::Variable& features,
                                  const AttentionDirective* attention = nullptr);

/// Logits for `classes` (in the given order) as one [N,|classes|] variable.
/// Each directive scales its own target branch; targets must be distinct.
autograd::Variable forward_classes(const Context& ctx, const autograd::Variable& x,
                                   const std::vector<int>& classes,
                                   std::span<const AttentionDirective> attention = {},
                                   Trace* trace = nullptr);

Logits forward_full(const arch::ModelSpec& model, const ParamStore& params, const Tensor& x,
                    Trace* trace = nullptr);
/// Evaluates only the branches (and superclass tiers) needed by C.
Logits forward_cutout(const arch::ModelSpec& model, const ParamStore& params, const Tensor& x,
                      const arch::CutoutSet& classes, Trace* trace = nullptr);
Logits apply_attention(const arch::ModelSpec& model, const ParamStore& params, const Tensor& x,
                       const AttentionDirective& directive);
Logits apply_attention_pairs(const arch::ModelSpec& model, const ParamStore& params,
                             const Tensor& x, std::span<const AttentionDirective> directives);

/// Class probabilities [N,|C|], normalized over the logits present.
Tensor subset_softmax(const Logits& logits, SoftmaxSign sign = SoftmaxSign::positive);

/// Keeps the columns of `classes` (in that order).
Logits restrict_to(const Logits& logits, const std::vector<int>& classes);

/// Per-row class with the largest logit, ties to the lowest column.
std::vector<int> argmax_classes(const Logits& logits);

/// x must be [N, C, H, W] with C, H, W of the model input.
void check_input(const arch::ModelSpec& model, const Tensor& x);
/// Non-empty and all active in the model.
void check_classes(const arch::ModelSpec& model, const std::vector<int>& classes);

/// Checks a directive against the active model; gain must be finite and >= 0.
void check_attention(const arch::ModelSpec& model, const AttentionDirective& directive);
void check_attention(const arch::ModelSpec& model, std::span<const AttentionDirective> directives);

}  // namespace hlfp::runtime
