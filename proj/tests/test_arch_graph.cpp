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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "hlfp/arch_graph.hpp"
#include "hlfp/arch_io.hpp"
#include "hlfp/errors.hpp"

using namespace hlfp;
using namespace hlfp::arch;

namespace {

bool has_rule(const std::vector<Violation>& v, const std::string& rule) {
  return std::any_of(v.begin(), v.end(), [&](const Violation& x) { return x.rule == rule; });
}

SuperclassMap modulo_map(int k, int s) {
  SuperclassMap m;
  for (int c = 1; c <= k; ++c) m.push_back((c - 1) % s + 1);
  return m;
}

}  // namespace

TEST_CASE("variant names round trip and accept hyphens") {
  for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
  CHECK(parse_variant("hlfp-late-sp") == Variant::hlfp_late_sp);
  CHECK_THROWS_AS(parse_variant("vgg16"), ValidationError);
}

TEST_CASE("cutout set parsing") {
  auto c = CutoutSet::parse("1-5,8", 10);
  CHECK(c.classes() == std::vector<int>{1, 2, 3, 4, 5, 8});
  CHECK(c.to_string() == "1-5,8");
  CHECK(CutoutSet::parse(c.to_string(), 10).classes() == c.classes());
  CHECK(CutoutSet::make({3, 1, 2}, 3).classes() == std::vector<int>{1, 2, 3});
  CHECK_THROWS_AS(CutoutSet::parse("0-3", 10), ValidationError);
  CHECK_THROWS_AS(CutoutSet::parse("9-11", 10), ValidationError);
  CHECK_THROWS_AS(CutoutSet::parse("", 10), ValidationError);
  CHECK_THROWS_AS(CutoutSet::make({2, 2}, 10), ValidationError);
  CHECK_THROWS_AS(CutoutSet::parse("a", 10), ValidationError);
}

TEST_CASE("canonical stage shapes at 224") {
  auto m = build_resnet(50, 1000);
  auto shapes = infer_shapes(m);
  auto find = [&](const std::string& s) {
    for (const auto& x : shapes)
      if (x.stage == s) return x.output;
    FAIL("stage missing: " << s);
    return FeatureShape{};
  };
  CHECK(find("stem.conv") == FeatureShape{64, 112, 112});
  CHECK(find("stem.pool") == FeatureShape{64, 56, 56});
  CHECK(find("conv2") == FeatureShape{256, 56, 56});
  CHECK(find("conv3") == FeatureShape{512, 28, 28});
  CHECK(find("conv4") == FeatureShape{1024, 14, 14});
  CHECK(find("conv5") == FeatureShape{2048, 7, 7});

  auto h = infer_shapes(build_hlfp(Variant::hlfp_small, 10));
  bool saw_conv6 = false;
  for (const auto& x : h)
    if (x.stage == "conv6") {
      saw_conv6 = true;
      CHECK(x.output == FeatureShape{128, 4, 4});
      CHECK(x.tier == Tier::branch);
      CHECK(x.parallelism == 10);
    }
  CHECK(saw_conv6);
}

TEST_CASE("every built-in variant validates") {
  for (Variant v : all_variants()) {
    for (int k : {2, 10, 100}) {
      CAPTURE(variant_name(v));
      CAPTURE(k);
      auto m = v == Variant::hlfp_nested ? build_hlfp_nested(k, modulo_map(k, std::max(1, k / 2)))
               : v == Variant::resnet18  ? build_resnet(18, k)
               : v == Variant::resnet50  ? build_resnet(50, k)
               : v == Variant::resnet152 ? build_resnet(152, k)
                                         : build_hlfp(v, k);
      auto violations = validate(m);
      for (const auto& x : violations) MESSAGE(x.layer << ": " << x.message);
      CHECK(violations.empty());
    }
  }
  CHECK(validate(build_tiny_hlfp(10)).empty());
}

TEST_CASE("nested identity map still has two split points") {
  CHECK(validate(build_hlfp_nested(6, modulo_map(6, 6))).empty());
}

TEST_CASE("validation reports structural faults") {
  const auto base = build_hlfp(Variant::hlfp_small, 10);

  SUBCASE("fan-in") {
    auto m = base;
    m.branch_stages.back().parallelism = 5;
    CHECK_FALSE(validate(m).empty());
    CHECK_THROWS_AS(require_valid(m), ValidationError);
  }
  SUBCASE("second split point") {
    auto m = base;
    m.branch_stages[0].parallelism = 5;
    auto v = validate(m);
    CHECK(has_rule(v, "split-point"));
  }
  SUBCASE("channel chain broken") {
    auto m = base;
    m.branch_stages[1].block = make_block(256, 64, 256, 2);
    CHECK(has_rule(validate(m), "channel chain"));
  }
  SUBCASE("projection missing where required") {
    auto m = base;
    m.branch_stages[0].block.has_projection = false;
    CHECK(has_rule(validate(m), "projection"));
  }
  SUBCASE("terminal parallelism must equal k") {
    auto m = base;
    m.num_classes = 12;
    m.active_classes.push_back(11);
    m.active_classes.push_back(12);
    CHECK_FALSE(validate(m).empty());
  }
  SUBCASE("serial model with per-branch head") {
    auto m = build_resnet(50, 10);
    m.head.kind = HeadKind::per_branch;
    CHECK_FALSE(validate(m).empty());
  }
  SUBCASE("bad group count") {
    auto m = base;
    m.stem.groups = 5;
    CHECK(has_rule(validate(m), "conv groups"));
  }
  SUBCASE("input too small") {
    auto m = base;
    m.input = {3, 0, 0};
    CHECK_FALSE(validate(m).empty());
    CHECK_THROWS(infer_shapes(m));
  }
}

TEST_CASE("superclass map checks") {
  SUBCASE("missing superclass") {
    auto m = build_hlfp_nested(10, modulo_map(10, 4));
    (*m.superclass_map)[3] = 1;  // superclass 4 loses its only remaining members
    (*m.superclass_map)[7] = 1;
    CHECK(has_rule(validate(m), "superclass map"));
  }
  SUBCASE("out of range") {
    auto m = build_hlfp_nested(10, modulo_map(10, 4));
    (*m.superclass_map)[0] = 9;
    CHECK(has_rule(validate(m), "superclass map"));
  }
  SUBCASE("wrong length") {
    auto m = build_hlfp_nested(10, modulo_map(10, 4));
    m.superclass_map->pop_back();
    CHECK(has_rule(validate(m), "superclass map"));
  }
  CHECK_THROWS(build_model(Variant::hlfp_nested, 10));
}

TEST_CASE("cutouts keep the trunk and only the selected branches") {
  auto m = build_hlfp(Variant::hlfp_small, 10);
  auto c = apply_cutout(m, CutoutSet::parse("2,4,6", 10));
  CHECK(c.is_cutout());
  CHECK(c.active_classes == std::vector<int>{2, 4, 6});
  CHECK(c.trunk_stages == m.trunk_stages);
  CHECK(validate(c).empty());
  // nested cutouts drop unused superclass tiers
  auto n = build_hlfp_nested(10, modulo_map(10, 5));
  auto nc = apply_cutout(n, CutoutSet::parse("1,6,2", 10));
  CHECK(nc.active_superclasses() == std::vector<int>{1, 2});
  CHECK_THROWS_AS(apply_cutout(build_resnet(50, 10), CutoutSet::full(10)), ValidationError);
  CHECK_THROWS_AS(apply_cutout(c, CutoutSet::parse("3", 10)), ValidationError);
}

TEST_CASE("tensor naming for owners") {
  CHECK(Owner{Tier::trunk, 0}.prefix() == "trunk.");
  CHECK(Owner{Tier::branch, 7}.prefix() == "branch.7.");
  CHECK(Owner{Tier::superclass, 3}.label() == "superclass-3");
  auto layers = tier_layers(build_hlfp(Variant::hlfp_small, 3), Tier::branch);
  CHECK(layers.front().name == "conv4.0.conv1");
  CHECK(layers.back().name == "head.fc");
  CHECK(layers.back().out_features == 1);
}

TEST_CASE("report flags") {
  auto flags = report_flags(build_hlfp(Variant::hlfp_late_big_sp, 1000));
  CHECK_FALSE(flags.empty());
  CHECK(report_flags(build_hlfp(Variant::hlfp_small, 10)).empty());
}

TEST_CASE("architecture text round trip") {
  std::vector<ModelSpec> models{build_resnet(50, 10), build_resnet(18, 7),
                                build_hlfp(Variant::hlfp_big, 4), build_tiny_hlfp(10),
                                build_hlfp_nested(6, modulo_map(6, 3)),
                                apply_cutout(build_hlfp(Variant::hlfp_small, 10),
                                             CutoutSet::parse("1-5", 10))};
  for (const auto& m : models) {
    const auto text = to_text(m);
    const auto back = from_text(text);
    CHECK(back == m);
    CHECK(to_text(back) == text);
  }
  CHECK_THROWS_AS(from_text("{"), IoError);
  CHECK_THROWS_AS(from_text("{\"format\": \"other\"}"), IoError);
  CHECK_THROWS_AS(from_text("[]"), IoError);
}

TEST_CASE("superclass map text") {
  auto m = parse_superclass_map("# class superclass\n1 1\n2 1\n3 2\n\n4 2 # tail\n");
  CHECK(m == SuperclassMap{1, 1, 2, 2});
  CHECK_THROWS_AS(parse_superclass_map("1 1\n3 2\n"), IoError);
  CHECK_THROWS_AS(parse_superclass_map("1 1\n1 2\n"), IoError);
  CHECK_THROWS_AS(parse_superclass_map("1\n"), IoError);
  CHECK_THROWS_AS(parse_superclass_map(""), IoError);
}

TEST_CASE("width divisor scales channels") {
  auto t = build_tiny_hlfp(10);
  CHECK(t.input == InputShape{3, 64, 64});
  CHECK(t.stem.out_channels == 16);
  CHECK(t.head.in_features == 32);
  CHECK(t.name.find("_d4") != std::string::npos);
}
