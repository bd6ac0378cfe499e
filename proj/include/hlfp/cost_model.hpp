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

// Exact integer accounting of parameters and multiply-accumulates.
//
// Conventions: conv = kh*kw*(cin/groups)*cout (+cout bias) parameters and
// kh*kw*(cin/groups)*cout*Hout*Wout MACs; normalization = 2*channels
// parameters, 0 MACs (running statistics are buffers); fully-connected =
// in*out + out parameters, in*out MACs; pooling and activations are free.
// The trunk is charged once regardless of how many branches are active.

#include <cstdint>
#include <string>
#include <vector>

#include "hlfp/arch_graph.hpp"

namespace hlfp::cost {

struct LayerCost {
  std::string layer;  // fully qualified, e.g. "branch.3.conv5.0.conv2"
  std::string stage;
  std::string owner;  // "trunk", "superclass-<j>", "branch-<i>"
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct CostReport {
  std::string model;
  std::vector<LayerCost> per_layer;
  std::int64_t trunk_params = 0;        // stem + serial stages (+ shared head)
  std::int64_t head_params = 0;         // shared head only; per-branch heads are branch params
  std::int64_t per_superclass_params = 0;
  std::int64_t superclass_params = 0;   // all active superclass tiers
  std::int64_t per_branch_params = 0;   // one branch including its head
  std::int64_t branch_params = 0;       // all active branches
  std::int64_t trunk_macs = 0;
  std::int64_t per_branch_macs = 0;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  int active_branches = 0;
  int active_superclasses = 0;

  double gmacs() const { return static_cast<double>(total_macs) / 1e9; }
};

/// Layer rows are included unless `with_layers` is false (k=1000 models
/// have tens of thousands of rows).
CostReport cost_report(const arch::ModelSpec& model, bool with_layers = true);

std::int64_t count_params(const arch::ModelSpec& model);
std::int64_t count_macs(const arch::ModelSpec& model);
std::int64_t count_macs(const arch::ModelSpec& model, const arch::InputShape& input);

struct Reduction {
  double param_pct = 0.0;
  double mac_pct = 0.0;
};

/// 100 * (1 - cut/full). Throws ValidationError when a full total is zero.
Reduction reduction_report(const CostReport& full, const CostReport& cut);
double reduction_pct(double full, double cut);

/// Round to one decimal, the reporting precision of reduction percentages.
double round1(double pct);

}  // namespace hlfp::cost
