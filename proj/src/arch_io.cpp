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

#include "hlfp/arch_io.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hlfp/errors.hpp"

namespace hlfp::arch {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json conv_json(const ConvSpec& c) {
  return {{"kernel", {c.kernel_h, c.kernel_w}}, {"in", c.in_channels},
          {"out", c.out_channels},              {"stride", c.stride},
          {"groups", c.groups},                 {"bias", c.has_bias}};
}

ConvSpec conv_from(const json& j) {
  ConvSpec c;
  c.kernel_h = j.at("kernel").at(0).get<int>();
  c.kernel_w = j.at("kernel").at(1).get<int>();
  c.in_channels = j.at("in").get<int>();
  c.out_channels = j.at("out").get<int>();
  c.stride = j.at("stride").get<int>();
  c.groups = j.at("groups").get<int>();
  c.has_bias = j.at("bias").get<bool>();
  return c;
}

json stage_json(const StageSpec& s) {
  const auto& b = s.block;
  return {{"name", s.name},
          {"block", b.kind == BlockKind::basic ? "basic" : "bottleneck"},
          {"channels", {b.in_channels, b.mid_channels, b.out_channels}},
          {"stride", b.stride},
          {"projection", b.has_projection},
          {"reps", s.reps},
          {"parallelism", s.parallelism}};
}

StageSpec stage_from(const json& j) {
  StageSpec s;
  s.name = j.at("name").get<std::string>();
  const auto kind = j.at("block").get<std::string>();
  if (kind != "basic" && kind != "bottleneck") throw IoError("unknown block kind '" + kind + "'");
  s.block.kind = kind == "basic" ? BlockKind::basic : BlockKind::bottleneck;
  const auto& ch = j.at("channels");
  s.block.in_channels = ch.at(0).get<int>();
  s.block.mid_channels = ch.at(1).get<int>();
  s.block.out_channels = ch.at(2).get<int>();
  s.block.stride = j.at("stride").get<int>();
  s.block.has_projection = j.at("projection").get<bool>();
  s.reps = j.at("reps").get<int>();
  s.parallelism = j.at("parallelism").get<int>();
  return s;
}

json stages_json(const std::vector<StageSpec>& stages) {
  json arr = json::array();
  for (const auto& s : stages) arr.push_back(stage_json(s));
  return arr;
}

std::vector<StageSpec> stages_from(const json& j) {
  std::vector<StageSpec> out;
  for (const auto& s : j) out.push_back(stage_from(s));
  return out;
}

}  // namespace

std::string to_text(const ModelSpec& m) {
  json j;
  j["format"] = "hlfp-arch";
  j["version"] = kFormatVersion;
  j["name"] = m.name;
  j["variant"] = std::string(variant_name(m.variant));
  j["input"] = {m.input.channels, m.input.height, m.input.width};
  j["classes"] = m.num_classes;
  j["stem"] = {{"conv", conv_json(m.stem)},
               {"pool", {{"window", m.stem_pool.window},
                         {"stride", m.stem_pool.stride},
                         {"pad", m.stem_pool.pad}}}};
  j["trunk"] = stages_json(m.trunk_stages);
  j["superclass"] = stages_json(m.superclass_stages);
  j["branch"] = stages_json(m.branch_stages);
  j["head"] = {{"kind", m.head.kind == HeadKind::shared ? "shared" : "per_branch"},
               {"in_features", m.head.in_features}};
  j["superclass_map"] = m.superclass_map ? json(*m.superclass_map) : json(nullptr);
  j["active_classes"] = m.active_classes;
  return j.dump(2) + "\n";
}

ModelSpec from_text(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(std::string("architecture description is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "hlfp-arch")
      throw IoError("not an hlfp-arch description");
    if (j.at("version").get<int>() != kFormatVersion)
      throw IoError("unsupported hlfp-arch version");
    ModelSpec m;
    m.name = j.at("name").get<std::string>();
    m.variant = parse_variant(j.at("variant").get<std::string>());
    const auto& in = j.at("input");
    m.input = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
    m.num_classes = j.at("classes").get<int>();
    m.stem = conv_from(j.at("stem").at("conv"));
    const auto& pool = j.at("stem").at("pool");
    m.stem_pool = {pool.at("window").get<int>(), pool.at("stride").get<int>(),
                   pool.at("pad").get<int>()};
    m.trunk_stages = stages_from(j.at("trunk"));
    m.superclass_stages = stages_from(j.at("superclass"));
    m.branch_stages = stages_from(j.at("branch"));
    const auto kind = j.at("head").at("kind").get<std::string>();
    if (kind != "shared" && kind != "per_branch") throw IoError("unknown head kind '" + kind + "'");
    m.head = {kind == "shared" ? HeadKind::shared : HeadKind::per_branch,
              j.at("head").at("in_features").get<int>()};
    if (!j.at("superclass_map").is_null())
      m.superclass_map = j.at("superclass_map").get<SuperclassMap>();
    m.active_classes = j.at("active_classes").get<std::vector<int>>();
    return m;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed architecture description: ") + e.what());
  }
}

ModelSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open architecture file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void save_spec(const ModelSpec& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write architecture file: " + path.string());
  out << to_text(model);
}

SuperclassMap parse_superclass_map(std::string_view text) {
  std::map<int, int> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    int cls = 0, sup = 0;
    if (!(ls >> cls)) continue;
    if (!(ls >> sup)) throw IoError("superclass map line " + std::to_string(lineno) + " malformed");
    if (cls < 1 || !entries.emplace(cls, sup).second)
      throw IoError("superclass map line " + std::to_string(lineno) + ": bad or repeated class");
  }
  if (entries.empty()) throw IoError("superclass map is empty");
  SuperclassMap map;
  int expect = 1;
  for (const auto& [cls, sup] : entries) {
    if (cls != expect)
      throw IoError("superclass map is not total: class " + std::to_string(expect) + " missing");
    map.push_back(sup);
    ++expect;
  }
  return map;
}

SuperclassMap load_superclass_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open superclass map: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_superclass_map(ss.str());
}

}  // namespace hlfp::arch
