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

#include "hlfp/cost_model.hpp"

#include <cmath>

#include "hlfp/errors.hpp"

namespace hlfp::cost {

using arch::Owner;
using arch::Tier;

namespace {

struct TierTotals {
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t head_params = 0;
};

TierTotals totals(const std::vector<arch::LayerInfo>& layers) {
  TierTotals t;
  for (const auto& l : layers) {
    t.params += l.params();
    t.macs += l.macs();
    if (l.stage == "head") t.head_params += l.params();
  }
  return t;
}

void append_rows(CostReport& r, const std::vector<arch::LayerInfo>& layers, const Owner& owner) {
  for (const auto& l : layers)
    r.per_layer.push_back({owner.prefix() + l.name, l.stage, owner.label(), l.params(), l.macs()});
}

}  // namespace

CostReport cost_report(const arch::ModelSpec& model, bool with_layers) {
  arch::require_valid(model);
  CostReport r;
  r.model = model.name;

  const auto trunk = arch::tier_layers(model, Tier::trunk);
  const TierTotals t = totals(trunk);
  r.trunk_params = t.params;
  r.head_params = t.head_params;
  r.trunk_macs = t.macs;
  if (with_layers) append_rows(r, trunk, Owner{Tier::trunk, 0});

  const auto active_super = model.active_superclasses();
  if (model.is_nested()) {
    const auto tier = arch::tier_layers(model, Tier::superclass);
    const TierTotals s = totals(tier);
    r.per_superclass_params = s.params;
    r.active_superclasses = static_cast<int>(active_super.size());
    r.superclass_params = s.params * r.active_superclasses;
    r.total_macs += s.macs * r.active_superclasses;
    if (with_layers)
      for (int j : active_super) append_rows(r, tier, Owner{Tier::superclass, j});
  }

  if (model.has_branches()) {
    const auto branch = arch::tier_layers(model, Tier::branch);
    const TierTotals b = totals(branch);
    r.per_branch_params = b.params;
    r.per_branch_macs = b.macs;
    r.active_branches = static_cast<int>(model.active_classes.size());
    r.branch_params = b.params * r.active_branches;
    r.total_macs += b.macs * r.active_branches;
    if (with_layers)
      for (int i : model.active_classes) append_rows(r, branch, Owner{Tier::branch, i});
  }

  r.total_macs += r.trunk_macs;
  r.total_params = r.trunk_params + r.superclass_params + r.branch_params;
  return r;
}

std::int64_t count_params(const arch::ModelSpec& model) {
  return cost_report(model, false).total_params;
}

std::int64_t count_macs(const arch::ModelSpec& model) {
  return cost_report(model, false).total_macs;
}

std::int64_t count_macs(const arch::ModelSpec& model, const arch::InputShape& input) {
  arch::ModelSpec m = model;
  m.input = input;
  return count_macs(m);
}

double reduction_pct(double full, double cut) {
  if (full == 0.0) throw ValidationError("reduction against a zero total is undefined");
  return 100.0 * (1.0 - cut / full);
}

Reduction reduction_report(const CostReport& full, const CostReport& cut) {
  return {reduction_pct(static_cast<double>(full.total_params), static_cast<double>(cut.total_params)),
          reduction_pct(static_cast<double>(full.total_macs), static_cast<double>(cut.total_macs))};
}

double round1(double pct) { return std::round(pct * 10.0) / 10.0; }

}  // namespace hlfp::cost
