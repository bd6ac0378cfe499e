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

#include "hlfp/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "hlfp/arch_graph.hpp"
#include "hlfp/arch_io.hpp"
#include "hlfp/cost_model.hpp"
#include "hlfp/dataset.hpp"
#include "hlfp/errors.hpp"
#include "hlfp/param_store.hpp"
#include "hlfp/parallel_exec.hpp"
#include "hlfp/runtime.hpp"
#include "hlfp/trainer.hpp"

#ifndef HLFP_VERSION
#define HLFP_VERSION "0.0.0"
#endif

namespace hlfp::cli {

namespace {

using ojson = nlohmann::ordered_json;
using arch::ModelSpec;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// output

enum class Format { table, csv, json };

Format parse_format(const std::string& s) {
  if (s == "table") return Format::table;
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw UsageError("--format must be table, csv or json");
}

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<ojson>> rows;
};

std::string cell_text(const ojson& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v.get<double>());
    return buf;
  }
  return v.dump();
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

void print(const Table& t, Format f, std::ostream& out) {
  if (f == Format::json) {
    ojson arr = ojson::array();
    for (const auto& r : t.rows) {
      ojson o = ojson::object();
      for (std::size_t i = 0; i < t.columns.size(); ++i) o[t.columns[i]] = r[i];
      arr.push_back(std::move(o));
    }
    out << arr.dump(2) << "\n";
    return;
  }
  if (f == Format::csv) {
    for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << t.columns[i];
    out << "\n";
    for (const auto& r : t.rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << csv_escape(cell_text(r[i]));
      out << "\n";
    }
    return;
  }
  std::vector<std::size_t> w(t.columns.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = t.columns[i].size();
  for (const auto& r : t.rows)
    for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], cell_text(r[i]).size());
  auto line = [&](auto cell, auto right) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const std::string s = cell(i);
      const std::string pad(w[i] - s.size(), ' ');
      out << (i ? "  " : "") << (right(i) ? pad + s : s + pad);
    }
    out << "\n";
  };
  line([&](std::size_t i) { return t.columns[i]; }, [](std::size_t) { return false; });
  std::size_t total = 0;
  for (auto x : w) total += x;
  total += 2 * (w.size() - 1);
  for (std::size_t i = 0; i < total; ++i) out << "─";
  out << "\n";
  for (const auto& r : t.rows)
    line([&](std::size_t i) { return cell_text(r[i]); },
         [&](std::size_t i) { return r[i].is_number(); });
}

std::string hex64(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t text_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

// ---------------------------------------------------------------------------
// options

struct ArchOpts {
  std::string variant = "hlfp-small";
  int classes = 10;
  std::string arch_file;
  std::string map_file;
  int superclasses = 0;
  int width_divisor = 1;
  int input = 224;
  bool tiny = false;
};

struct EvalOpts {
  std::string checkpoint;
  std::string arch_file;
  std::string data;
  std::string split = "val";
  std::string classes;
  std::vector<std::string> attend;
  std::string stage = "conv5";
  std::string sign = "positive";
  std::string probabilities;
  int batch_size = 64;
};

struct Opts {
  std::string format = "table";
  std::string manifest;
  std::string config;
  ArchOpts arch;
  EvalOpts eval;
  // describe / build
  bool emit = false;
  std::string from_file;
  // cost
  std::string cutout;
  bool totals_only = false;
  // train
  std::string data;
  std::string out;
  std::string metrics;
  train::TrainConfig train;
  std::string augmentation = "none";
  // attend
  float gain = 1.0f;
  int target = 0;
  bool true_class = false;
  std::string sweep;
  // bench
  std::string mode = "serial";
  int workers = 4;
  int warmup = 5;
  int iters = 30;
  int batch = 1;
  std::uint64_t seed = 1;
  std::string checkpoint;
};

void add_common(CLI::App* sub, Opts& o) {
  sub->add_option("--format", o.format, "table, csv or json");
  sub->add_option("--manifest", o.manifest, "where to write the run manifest");
}

void add_arch(CLI::App* sub, ArchOpts& a) {
  sub->add_option("--variant", a.variant, "model variant, e.g. hlfp-small, resnet50");
  sub->add_option("--classes", a.classes, "number of classes k");
  sub->add_option("--arch", a.arch_file, "architecture file; overrides --variant");
  sub->add_option("--superclass-map", a.map_file, "lines of 'class superclass' (hlfp-nested)");
  sub->add_option("--superclasses", a.superclasses, "contiguous grouping into s superclasses");
  sub->add_option("--width-divisor", a.width_divisor, "divide every channel width");
  sub->add_option("--input", a.input, "input height and width");
  sub->add_flag("--tiny", a.tiny, "quarter width at 64x64 input");
}

void add_eval(CLI::App* sub, EvalOpts& e, bool with_classes) {
  sub->add_option("--checkpoint", e.checkpoint, "trained parameters")->required();
  sub->add_option("--arch", e.arch_file, "architecture file (default: <checkpoint>.arch.json)");
  sub->add_option("--data", e.data, "image directory or synthetic:k,n,size,seed");
  sub->add_option("--split", e.split, "train or val");
  if (with_classes) sub->add_option("--classes", e.classes, "class subset, e.g. 1-5,8");
  sub->add_option("--attend", e.attend, "attention pair CLASS:GAIN (repeatable)")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  sub->add_option("--stage", e.stage, "branch stage scaled by attention");
  sub->add_option("--sign", e.sign, "softmax exponent sign: positive or negative");
  sub->add_option("--probabilities", e.probabilities, "write per-sample probabilities CSV");
  sub->add_option("--batch-size", e.batch_size, "evaluation batch size");
}

// Config file sections [train] and [run] hold flag names without dashes;
// command-line flags win over the file.
void apply_config(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::FileError& e) {
    throw IoError("cannot read config file " + path);
  }
  for (const auto& it : items) {
    if (it.name == "++" || it.name == "--") continue;
    const std::string section = it.parents.empty() ? "" : it.parents.front();
    if (section != "train" && section != "run")
      throw UsageError("config " + path + ": key '" + it.name + "' must sit in a [train] or [run] section");
    std::string flag = it.name;
    std::replace(flag.begin(), flag.end(), '_', '-');
    CLI::Option* opt = sub->get_option_no_throw("--" + flag);
    if (!opt || flag == "config")
      throw UsageError("config " + path + ": '" + it.name + "' is not an option of '" +
                       sub->get_name() + "'");
    if (opt->count() > 0) continue;
    if (opt->get_items_expected_max() == 1) {
      std::string joined;
      for (const auto& v : it.inputs) joined += (joined.empty() ? "" : ",") + v;
      opt->add_result(joined);
    } else {
      for (const auto& v : it.inputs) opt->add_result(v);
    }
    opt->run_callback();
  }
}

// ---------------------------------------------------------------------------
// models and data

arch::SuperclassMap contiguous_map(int k, int s) {
  if (s < 1 || s > k) throw ValidationError("--superclasses must be in 1..k");
  arch::SuperclassMap m;
  for (int c = 0; c < k; ++c) m.push_back(static_cast<int>(static_cast<std::int64_t>(c) * s / k) + 1);
  return m;
}

ModelSpec resolve_model(const ArchOpts& a) {
  if (!a.arch_file.empty()) {
    ModelSpec m = arch::load_spec(a.arch_file);
    arch::require_valid(m);
    return m;
  }
  const auto v = arch::parse_variant(a.variant);
  if (a.classes < 1) throw ValidationError("--classes must be >= 1");
  arch::BuildOptions b{a.width_divisor, a.input};
  if (a.tiny) b = {4, 64};
  std::optional<arch::SuperclassMap> map;
  if (!a.map_file.empty())
    map = arch::load_superclass_map(a.map_file);
  else if (a.superclasses > 0)
    map = contiguous_map(a.classes, a.superclasses);
  if (map && v != arch::Variant::hlfp_nested)
    throw ValidationError("a superclass map only applies to hlfp-nested");
  if (!map && v == arch::Variant::hlfp_nested)
    throw ValidationError("hlfp-nested needs --superclass-map or --superclasses");
  ModelSpec m = arch::build_model(v, a.classes, b, map);
  arch::require_valid(m);
  return m;
}

struct Loaded {
  ModelSpec model;
  ParamStore params;
};

Loaded load_trained(const std::string& checkpoint, const std::string& arch_file) {
  const std::string spec = arch_file.empty() ? checkpoint + ".arch.json" : arch_file;
  Loaded l{arch::load_spec(spec), load_checkpoint(checkpoint)};
  arch::require_valid(l.model);
  runtime::check_params(l.model, l.params);
  return l;
}

data::Split parse_split(const std::string& s) {
  if (s == "train") return data::Split::train;
  if (s == "val") return data::Split::val;
  throw UsageError("--split must be train or val");
}

runtime::SoftmaxSign parse_sign(const std::string& s) {
  if (s == "positive") return runtime::SoftmaxSign::positive;
  if (s == "negative") return runtime::SoftmaxSign::negative;
  throw UsageError("--sign must be positive or negative");
}

std::vector<runtime::AttentionDirective> parse_pairs(const std::vector<std::string>& pairs,
                                                     const std::string& stage) {
  std::vector<runtime::AttentionDirective> out;
  for (const auto& p : pairs) {
    const auto colon = p.find(':');
    if (colon == std::string::npos) throw UsageError("--attend expects CLASS:GAIN, got '" + p + "'");
    try {
      std::size_t used = 0;
      const int c = std::stoi(p.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument(p);
      const std::string g = p.substr(colon + 1);
      const float gain = std::stof(g, &used);
      if (used != g.size()) throw std::invalid_argument(p);
      out.push_back({c, gain, stage});
    } catch (const std::logic_error&) {
      throw UsageError("--attend expects CLASS:GAIN, got '" + p + "'");
    }
  }
  return out;
}

std::vector<float> parse_gains(const std::string& text) {
  std::vector<float> g;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      g.push_back(std::stof(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError("--sweep expects comma-separated gains, got '" + text + "'");
    }
  }
  if (g.empty()) throw UsageError("--sweep is empty");
  return g;
}

// ---------------------------------------------------------------------------
// manifests

ojson option_values(const CLI::App* sub) {
  ojson cfg = ojson::object();
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->get_lnames().empty() || opt->get_lnames().front() == "help") continue;
    const auto& name = opt->get_lnames().front();
    const auto& res = opt->results();
    if (res.empty())
      cfg[name] = opt->get_default_str();
    else if (res.size() == 1)
      cfg[name] = res.front();
    else
      cfg[name] = res;
  }
  return cfg;
}

ojson model_summary(const ModelSpec& m) {
  const auto full_classes = arch::CutoutSet::full(m.num_classes);
  return {{"name", m.name},
          {"variant", std::string(arch::variant_name(m.variant))},
          {"k", m.num_classes},
          {"active_classes", m.is_cutout() ? arch::CutoutSet::make(m.active_classes, m.num_classes)
                                                 .to_string()
                                           : full_classes.to_string()},
          {"params", cost::count_params(m)},
          {"macs", cost::count_macs(m)},
          {"arch_hash", hex64(text_hash(arch::to_text(m)))}};
}

struct Run {
  std::string command;
  std::vector<std::string> argv;
  CLI::App* sub = nullptr;
  ojson manifest = ojson::object();

  void start() {
    manifest["tool"] = "hlfp";
    manifest["version"] = HLFP_VERSION;
    manifest["subcommand"] = command;
    manifest["argv"] = argv;
    manifest["config"] = option_values(sub);
    manifest["versions"] = {{"hlfp", HLFP_VERSION},
                            {"compiler", __VERSION__},
                            {"cplusplus", static_cast<long>(__cplusplus)},
                            {"cli11", CLI11_VERSION},
                            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                                                  "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  }

  void write(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest " + path);
    f << manifest.dump(2) << "\n";
    if (!f) throw IoError("cannot write manifest " + path);
  }
};

std::string manifest_path(const Opts& o, const std::string& command, const std::string& out) {
  if (!o.manifest.empty()) return o.manifest;
  if (!out.empty()) return out + ".manifest.json";
  return "hlfp-" + command + ".manifest.json";
}

// ---------------------------------------------------------------------------
// subcommands

std::string conv_text(const arch::ConvSpec& c) {
  return std::to_string(c.kernel_h) + "x" + std::to_string(c.kernel_w) + "x" +
         std::to_string(c.in_channels) + "x" + std::to_string(c.out_channels);
}

std::string shape_text(const arch::FeatureShape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width);
}

Table describe_table(const ModelSpec& m) {
  Table t{{"stage", "tier", "par", "reps", "conv_a", "conv_b", "conv_c", "stride", "output"}, {}};
  const auto shapes = arch::infer_shapes(m);
  auto output_of = [&](const std::string& name, arch::Tier tier) {
    for (const auto& s : shapes)
      if (s.stage == name && s.tier == tier) return shape_text(s.output);
    return std::string();
  };
  t.rows.push_back({"conv1", "trunk", 1, 1, conv_text(m.stem), "", "", m.stem.stride,
                    output_of("stem.conv", arch::Tier::trunk)});
  t.rows.push_back({"pool1", "trunk", 1, 1,
                    std::to_string(m.stem_pool.window) + "x" + std::to_string(m.stem_pool.window) +
                        " max",
                    "", "", m.stem_pool.stride, output_of("stem.pool", arch::Tier::trunk)});
  auto add = [&](const std::vector<arch::StageSpec>& stages, arch::Tier tier) {
    for (const auto& s : stages) {
      const auto convs = s.block.main_path();
      std::vector<ojson> row{s.name, std::string(arch::tier_name(tier)), s.parallelism, s.reps};
      for (std::size_t i = 0; i < 3; ++i) row.emplace_back(i < convs.size() ? conv_text(convs[i]) : "");
      row.emplace_back(s.block.stride);
      row.emplace_back(output_of(s.name, tier));
      t.rows.push_back(std::move(row));
    }
  };
  add(m.trunk_stages, arch::Tier::trunk);
  add(m.superclass_stages, arch::Tier::superclass);
  add(m.branch_stages, arch::Tier::branch);
  const bool shared = m.head.kind == arch::HeadKind::shared;
  t.rows.push_back({"fc", shared ? "trunk" : "branch", shared ? 1 : m.num_classes, 1,
                    std::to_string(m.head.in_features) + "x" +
                        std::to_string(shared ? m.num_classes : 1),
                    "", "", 1, "1x1"});
  return t;
}

int cmd_describe(Opts& o, Run& run, std::ostream& out, std::ostream& err) {
  const Format f = parse_format(o.format);
  const ModelSpec m = resolve_model(o.arch);
  if (o.emit) {
    out << arch::to_text(m);
  } else {
    print(describe_table(m), f, out);
    for (const auto& note : arch::report_flags(m)) err << "note: " << note << "\n";
  }
  if (!o.manifest.empty()) {
    run.manifest["model"] = model_summary(m);
    run.write(o.manifest);
  }
  return kExitOk;
}

int cmd_build(Opts& o, Run& run, std::ostream& out, std::ostream& err) {
  const Format f = parse_format(o.format);
  std::string text;
  if (o.from_file == "-") {
    std::stringstream ss;
    ss << std::cin.rdbuf();
    text = ss.str();
  } else {
    std::ifstream in(o.from_file);
    if (!in) throw IoError("cannot open architecture file " + o.from_file);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  const ModelSpec m = arch::from_text(text);
  arch::require_valid(m);
  if (o.emit) {
    out << arch::to_text(m);
  } else {
    print(describe_table(m), f, out);
    for (const auto& note : arch::report_flags(m)) err << "note: " << note << "\n";
  }
  if (!o.manifest.empty()) {
    run.manifest["model"] = model_summary(m);
    run.write(o.manifest);
  }
  return kExitOk;
}

int cmd_cost(Opts& o, Run& run, std::ostream& out, std::ostream&) {
  const Format f = parse_format(o.format);
  const ModelSpec full = resolve_model(o.arch);
  std::optional<arch::CutoutSet> cs;
  if (!o.cutout.empty()) cs = arch::CutoutSet::parse(o.cutout, full.num_classes);
  const ModelSpec m = cs ? arch::apply_cutout(full, *cs) : full;
  const auto rep = cost::cost_report(m, !o.totals_only);

  Table t{{"layer", "stage", "owner", "params", "macs"}, {}};
  for (const auto& l : rep.per_layer) t.rows.push_back({l.layer, l.stage, l.owner, l.params, l.macs});
  t.rows.push_back({"total", "", "", rep.total_params, rep.total_macs});
  t.rows.push_back({"gmacs", "", "", nullptr, round2(rep.gmacs())});
  std::optional<cost::Reduction> red;
  if (cs) {
    const auto whole = cost::cost_report(full, false);
    red = cost::reduction_report(whole, rep);
    t.rows.push_back({"full total", "", "", whole.total_params, whole.total_macs});
    t.rows.push_back({"reduction pct", "", "", cost::round1(red->param_pct), cost::round1(red->mac_pct)});
  }
  print(t, f, out);
  if (!o.manifest.empty()) {
    run.manifest["model"] = model_summary(m);
    run.manifest["results"] = {{"params", rep.total_params}, {"macs", rep.total_macs}};
    if (red) run.manifest["results"]["reduction"] = {{"param_pct", red->param_pct}, {"mac_pct", red->mac_pct}};
    run.write(o.manifest);
  }
  return kExitOk;
}

int cmd_train(Opts& o, Run& run, std::ostream& out, std::ostream& err) {
  const Format f = parse_format(o.format);
  if (o.data.empty()) throw UsageError("train needs --data");
  if (o.out.empty()) throw UsageError("train needs --out");
  o.train.augmentation = train::parse_augmentation(o.augmentation);
  o.train.validate();
  const ModelSpec m = resolve_model(o.arch);
  if (m.input.height != m.input.width) throw ValidationError("training needs a square input");
  const auto source = data::parse_data_source(o.data);
  const auto train_set = data::load(source, m.input.height, data::Split::train);
  std::optional<data::Dataset> val;
  try {
    val = data::load(source, m.input.height, data::Split::val);
    if (val->size() == 0) val.reset();
  } catch (const IoError&) {
    val.reset();
  }

  const std::string metrics = o.metrics.empty() ? o.out + ".metrics.csv" : o.metrics;
  Table t{{"epoch", "train_loss", "train_top1", "val_top1", "seconds"}, {}};
  auto result = train::train(m, train_set, val ? &*val : nullptr, o.train, std::nullopt,
                             [&](const train::EpochMetrics& e) {
                               err << "epoch " << e.epoch << "/" << o.train.epochs << " loss "
                                   << e.train_loss << " train_top1 " << e.train_top1
                                   << " val_top1 " << e.val_top1 << "\n";
                               t.rows.push_back({e.epoch, e.train_loss, e.train_top1,
                                                 e.val_top1 < 0 ? ojson(nullptr) : ojson(e.val_top1),
                                                 e.seconds});
                             });
  save_checkpoint(result.params, o.out);
  arch::save_spec(m, o.out + ".arch.json");
  {
    std::ofstream mf(metrics);
    if (!mf) throw IoError("cannot write metrics " + metrics);
    print(t, Format::csv, mf);
  }
  print(t, f, out);

  std::ostringstream ckpt;
  write_checkpoint(result.params, ckpt);
  run.manifest["model"] = model_summary(m);
  run.manifest["data"] = {{"source", source.to_string()},
                          {"train_samples", train_set.size()},
                          {"val_samples", val ? val->size() : 0}};
  run.manifest["seed"] = o.train.seed;
  run.manifest["outputs"] = {{"checkpoint", o.out},
                             {"checkpoint_hash", hex64(text_hash(ckpt.str()))},
                             {"arch", o.out + ".arch.json"},
                             {"metrics", metrics}};
  const auto& last = result.history.back();
  run.manifest["results"] = {{"train_loss", last.train_loss},
                             {"train_top1", last.train_top1},
                             {"val_top1", last.val_top1 < 0 ? ojson(nullptr) : ojson(last.val_top1)}};
  run.write(manifest_path(o, "train", o.out));
  return kExitOk;
}

Table per_class_table(const train::EvalResult& r, const data::Dataset& d) {
  Table t{{"class", "name", "support", "correct", "top1", "mean_prob"}, {}};
  const auto width = r.classes.size();
  double all_prob = 0.0;
  for (std::size_t col = 0; col < width; ++col) {
    const int c = r.classes[col];
    std::int64_t support = 0, correct = 0;
    double prob = 0.0;
    for (std::size_t i = 0; i < r.samples.size(); ++i) {
      if (d.labels[r.samples[i]] != c) continue;
      ++support;
      if (r.predicted[i] == c) ++correct;
      prob += r.probabilities[i * width + col];
    }
    all_prob += prob;
    const std::string name =
        static_cast<std::size_t>(c) <= d.class_names.size() ? d.class_names[static_cast<std::size_t>(c - 1)] : "";
    t.rows.push_back({std::to_string(c), name, support, correct,
                      support ? ojson(static_cast<double>(correct) / static_cast<double>(support))
                              : ojson(nullptr),
                      support ? ojson(prob / static_cast<double>(support)) : ojson(nullptr)});
  }
  t.rows.push_back({"all", "", r.total, r.correct, r.top1, all_prob / static_cast<double>(r.total)});
  return t;
}

void write_probabilities(const std::string& path, const train::EvalResult& r, const data::Dataset& d) {
  if (path.empty()) return;
  Table t{{"sample", "label", "predicted"}, {}};
  for (int c : r.classes) t.columns.push_back("p_" + std::to_string(c));
  const auto width = r.classes.size();
  for (std::size_t i = 0; i < r.samples.size(); ++i) {
    std::vector<ojson> row{r.samples[i], d.labels[r.samples[i]], r.predicted[i]};
    for (std::size_t j = 0; j < width; ++j) row.emplace_back(r.probabilities[i * width + j]);
    t.rows.push_back(std::move(row));
  }
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  print(t, Format::csv, f);
}

struct EvalSetup {
  Loaded trained;
  data::DataSource source;
  data::Dataset dataset;
  train::EvalOptions options;
};

// Parses and validates every eval flag before loading data.
EvalSetup prepare_eval(const EvalOpts& e, bool need_data) {
  const auto split = parse_split(e.split);
  const auto sign = parse_sign(e.sign);
  if (need_data && e.data.empty()) throw UsageError("--data is required");
  EvalSetup s{load_trained(e.checkpoint, e.arch_file), {}, {}, {}};
  s.options.sign = sign;
  s.options.batch_size = e.batch_size;
  if (!e.classes.empty()) s.options.classes = arch::CutoutSet::parse(e.classes, s.trained.model.num_classes);
  s.options.attention = parse_pairs(e.attend, e.stage);
  runtime::check_attention(s.trained.model, s.options.attention);
  if (!e.data.empty()) {
    s.source = data::parse_data_source(e.data);
    s.dataset = data::load(s.source, s.trained.model.input.height, split);
  }
  return s;
}

void record_eval(Run& run, const EvalSetup& s, const train::EvalResult& r) {
  run.manifest["model"] = model_summary(s.trained.model);
  run.manifest["data"] = {{"source", s.source.to_string()}, {"samples", s.dataset.size()}};
  run.manifest["results"] = {{"top1", r.top1},
                             {"correct", r.correct},
                             {"total", r.total},
                             {"classes", arch::CutoutSet::make(r.classes, s.trained.model.num_classes).to_string()},
                             {"probabilities_hash", hex64(parallel::tensor_hash(r.probabilities))}};
}

int cmd_eval(Opts& o, Run& run, std::ostream& out, std::ostream&) {
  const Format f = parse_format(o.format);
  auto s = prepare_eval(o.eval, true);
  const auto r = train::evaluate(s.trained.model, s.trained.params, s.dataset, s.options);
  print(per_class_table(r, s.dataset), f, out);
  write_probabilities(o.eval.probabilities, r, s.dataset);
  record_eval(run, s, r);
  run.write(manifest_path(o, "eval", ""));
  return kExitOk;
}

int cmd_cutout(Opts& o, Run& run, std::ostream& out, std::ostream&) {
  const Format f = parse_format(o.format);
  if (o.eval.classes.empty()) throw UsageError("cutout needs --classes");
  auto s = prepare_eval(o.eval, false);
  const ModelSpec& full = s.trained.model;
  const auto cs = arch::CutoutSet::parse(o.eval.classes, full.num_classes);
  const ModelSpec cut = arch::apply_cutout(full, cs);
  runtime::check_params(cut, s.trained.params);
  const auto rep = cost::cost_report(cut, false);
  const auto red = cost::reduction_report(cost::cost_report(full, false), rep);

  Table t{{"model", "classes", "params", "macs", "gmacs", "param_reduction_pct", "mac_reduction_pct",
           "top1", "correct", "total"},
          {}};
  std::vector<ojson> row{cut.name, cs.to_string(), rep.total_params, rep.total_macs, round2(rep.gmacs()),
                         cost::round1(red.param_pct), cost::round1(red.mac_pct)};
  std::optional<train::EvalResult> r;
  if (!o.eval.data.empty()) {
    s.options.classes.reset();
    r = train::evaluate(cut, s.trained.params, s.dataset, s.options);
    row.insert(row.end(), {r->top1, r->correct, r->total});
    write_probabilities(o.eval.probabilities, *r, s.dataset);
  } else {
    row.insert(row.end(), {nullptr, nullptr, nullptr});
  }
  t.rows.push_back(std::move(row));

  if (!o.out.empty()) {
    ParamStore kept;
    for (const auto& ts : runtime::expected_tensors(cut)) {
      if (ts.parameter)
        kept.add_parameter(ts.name, s.trained.params.value(ts.name));
      else
        kept.add_buffer(ts.name, s.trained.params.value(ts.name));
    }
    save_checkpoint(kept, o.out);
    arch::save_spec(cut, o.out + ".arch.json");
    run.manifest["outputs"] = {{"checkpoint", o.out}, {"arch", o.out + ".arch.json"}};
  }
  print(t, f, out);
  if (r) {
    record_eval(run, s, *r);
  } else {
    run.manifest["results"] = ojson::object();
  }
  run.manifest["model"] = model_summary(cut);
  run.manifest["results"]["params"] = rep.total_params;
  run.manifest["results"]["macs"] = rep.total_macs;
  run.write(manifest_path(o, "cutout", o.out));
  return kExitOk;
}

int cmd_attend(Opts& o, Run& run, std::ostream& out, std::ostream&) {
  const Format f = parse_format(o.format);
  const int modes = (o.target > 0) + (o.true_class ? 1 : 0) + (o.eval.attend.empty() ? 0 : 1);
  if (modes > 1) throw UsageError("use only one of --class, --true-class and --attend");
  std::vector<float> gains;
  if (!o.sweep.empty()) gains = parse_gains(o.sweep);
  if (!gains.empty() && !o.eval.attend.empty()) throw UsageError("--sweep needs --class or --true-class");
  auto s = prepare_eval(o.eval, true);
  const bool by_label = modes == 0 || o.true_class;
  auto with_gain = [&](float g) {
    train::EvalOptions opt = s.options;
    if (by_label) {
      opt.true_class_gain = g;
      opt.true_class_stage = o.eval.stage;
    } else if (o.target > 0) {
      opt.attention = {{o.target, g, o.eval.stage}};
    }
    return opt;
  };
  const std::string target = by_label ? "true" : o.target > 0 ? std::to_string(o.target) : "pairs";

  if (gains.empty()) {
    const auto opt = o.eval.attend.empty() ? with_gain(o.gain) : s.options;
    const auto r = train::evaluate(s.trained.model, s.trained.params, s.dataset, opt);
    print(per_class_table(r, s.dataset), f, out);
    write_probabilities(o.eval.probabilities, r, s.dataset);
    record_eval(run, s, r);
    run.manifest["results"]["target"] = target;
    run.manifest["results"]["gain"] = o.gain;
  } else {
    train::EvalOptions base_opt = s.options;
    const auto base = train::evaluate(s.trained.model, s.trained.params, s.dataset, base_opt);
    Table t{{"gain", "target", "top1", "correct", "total", "delta_top1"}, {}};
    ojson sweep = ojson::array();
    for (float g : gains) {
      const auto r = train::evaluate(s.trained.model, s.trained.params, s.dataset, with_gain(g));
      t.rows.push_back({g, target, r.top1, r.correct, r.total, r.top1 - base.top1});
      sweep.push_back({{"gain", g}, {"top1", r.top1}, {"delta_top1", r.top1 - base.top1}});
    }
    print(t, f, out);
    record_eval(run, s, base);
    run.manifest["results"]["target"] = target;
    run.manifest["results"]["sweep"] = sweep;
  }
  run.write(manifest_path(o, "attend", ""));
  return kExitOk;
}

int cmd_bench(Opts& o, Run& run, std::ostream& out, std::ostream&) {
  const Format f = parse_format(o.format);
  parallel::BenchConfig c;
  c.mode = parallel::parse_bench_mode(o.mode);
  c.workers = o.workers;
  c.warmup = o.warmup;
  c.iters = o.iters;
  c.batch = o.batch;
  c.seed = o.seed;
  if (c.workers < 1) throw ValidationError("--workers must be >= 1");
  Loaded l = o.checkpoint.empty() ? Loaded{resolve_model(o.arch), {}}
                                  : load_trained(o.checkpoint, o.arch.arch_file);
  if (o.checkpoint.empty()) l.params = runtime::init_params(l.model, o.seed);
  const auto r = parallel::bench(l.model, l.params, c);
  Table t{{"model", "mode", "workers", "iters", "batch", "mean_ms", "median_ms", "p95_ms", "logits_hash"},
          {{l.model.name, std::string(parallel::bench_mode_name(r.mode)), r.workers, r.iters, r.batch,
            r.mean_ms, r.median_ms, r.p95_ms, hex64(r.logits_hash)}}};
  print(t, f, out);
  run.manifest["model"] = model_summary(l.model);
  run.manifest["seed"] = o.seed;
  run.manifest["results"] = {{"mode", std::string(parallel::bench_mode_name(r.mode))},
                             {"workers", r.workers},
                             {"mean_ms", r.mean_ms},
                             {"median_ms", r.median_ms},
                             {"p95_ms", r.p95_ms},
                             {"logits_hash", hex64(r.logits_hash)},
                             {"hardware_threads", std::thread::hardware_concurrency()}};
  run.write(manifest_path(o, "bench", ""));
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"hierarchical serial-parallel residual networks: describe, cost, train, evaluate"};
  app.name("hlfp");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Opts o;

  auto* describe = app.add_subcommand("describe", "stage layout of an architecture");
  add_common(describe, o);
  add_arch(describe, o.arch);
  describe->add_flag("--emit", o.emit, "print the architecture file instead");

  auto* build = app.add_subcommand("build", "validate an architecture file");
  add_common(build, o);
  build->add_option("--from-file", o.from_file, "architecture file, '-' for stdin")->required();
  build->add_flag("--emit", o.emit, "re-emit the parsed architecture");

  auto* cost = app.add_subcommand("cost", "parameter and MAC report");
  add_common(cost, o);
  add_arch(cost, o.arch);
  cost->add_option("--cutout", o.cutout, "class subset, e.g. 1-5,8");
  cost->add_flag("--totals-only", o.totals_only, "omit per-layer rows");

  auto* trn = app.add_subcommand("train", "train a model with SGD");
  add_common(trn, o);
  add_arch(trn, o.arch);
  trn->add_option("--config", o.config, "INI file with [train] and [run] sections");
  trn->add_option("--data", o.data, "image directory or synthetic:k,n,size,seed");
  trn->add_option("--out", o.out, "checkpoint path");
  trn->add_option("--metrics", o.metrics, "metrics CSV (default <out>.metrics.csv)");
  trn->add_option("--epochs", o.train.epochs);
  trn->add_option("--batch-size", o.train.batch_size);
  trn->add_option("--learning-rate,--lr", o.train.learning_rate);
  trn->add_option("--momentum", o.train.momentum);
  trn->add_option("--weight-decay", o.train.weight_decay);
  trn->add_option("--seed", o.train.seed);
  trn->add_option("--augmentation", o.augmentation, "none or flip_crop");

  auto* ev = app.add_subcommand("eval", "top-1 accuracy and class probabilities");
  add_common(ev, o);
  add_eval(ev, o.eval, true);
  ev->add_option("--config", o.config, "INI file with [run] section");

  auto* cut = app.add_subcommand("cutout", "keep a class subset of a trained model");
  add_common(cut, o);
  add_eval(cut, o.eval, true);
  cut->add_option("--out", o.out, "write the cutout checkpoint and architecture here");
  cut->add_option("--config", o.config, "INI file with [run] section");

  auto* att = app.add_subcommand("attend", "evaluate with branch attention");
  add_common(att, o);
  add_eval(att, o.eval, true);
  att->add_option("--gain", o.gain, "attention gain");
  att->add_option("--class", o.target, "fixed target class");
  att->add_flag("--true-class", o.true_class, "amplify each sample's own class (default)");
  att->add_option("--sweep", o.sweep, "comma-separated gains; reports the accuracy delta");
  att->add_option("--config", o.config, "INI file with [run] section");

  auto* bn = app.add_subcommand("bench", "inference latency");
  add_common(bn, o);
  add_arch(bn, o.arch);
  bn->add_option("--checkpoint", o.checkpoint, "trained parameters (default: seeded init)");
  bn->add_option("--mode", o.mode, "serial, parallel or single-branch");
  bn->add_option("--workers", o.workers);
  bn->add_option("--warmup", o.warmup);
  bn->add_option("--iters", o.iters);
  bn->add_option("--batch", o.batch);
  bn->add_option("--seed", o.seed);
  bn->add_option("--config", o.config, "INI file with [run] section");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  Run run;
  run.command = sub->get_name();
  run.argv = args;
  run.sub = sub;
  try {
    apply_config(sub, o.config);
    run.start();
    const std::string& c = run.command;
    if (c == "describe") return cmd_describe(o, run, out, err);
    if (c == "build") return cmd_build(o, run, out, err);
    if (c == "cost") return cmd_cost(o, run, out, err);
    if (c == "train") return cmd_train(o, run, out, err);
    if (c == "eval") return cmd_eval(o, run, out, err);
    if (c == "cutout") return cmd_cutout(o, run, out, err);
    if (c == "attend") return cmd_attend(o, run, out, err);
    if (c == "bench") return cmd_bench(o, run, out, err);
    throw UsageError("unknown subcommand " + c);
  } catch (const UsageError& e) {
    err << "hlfp " << run.command << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    err << "hlfp " << run.command << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "hlfp " << run.command << ": " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "hlfp " << run.command << ": " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace hlfp::cli
