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
#include <cmath>
#include <cstring>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hlfp/arch_graph.hpp"
#include "hlfp/dataset.hpp"
#include "hlfp/errors.hpp"
#include "hlfp/param_store.hpp"
#include "hlfp/runtime.hpp"
#include "hlfp/trainer.hpp"

using namespace hlfp;
using namespace hlfp::arch;
namespace fs = std::filesystem;

namespace {

ModelSpec micro(int k) { return build_hlfp(Variant::hlfp_small, k, BuildOptions{8, 32}); }

fs::path scratch_dir(const std::string& name) {
  auto p = fs::path(HLFP_TEST_DATA_DIR) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string checkpoint_bytes(const ParamStore& p) {
  std::stringstream s;
  write_checkpoint(p, s);
  return s.str();
}

// Ridge regression in dual form on raw pixels; returns held-out accuracy.
double linear_probe(const data::Dataset& train, const data::Dataset& test, double ridge) {
  const auto n = train.size();
  const auto d = static_cast<std::size_t>(train.sample_numel());
  std::vector<double> gram(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = 0.0;
      const float* a = train.pixels.data() + i * d;
      const float* b = train.pixels.data() + j * d;
      for (std::size_t t = 0; t < d; ++t) acc += static_cast<double>(a[t]) * b[t];
      gram[i * n + j] = gram[j * n + i] = acc;
    }
  for (std::size_t i = 0; i < n; ++i) gram[i * n + i] += ridge;
  std::vector<double> alpha(n);
  for (std::size_t i = 0; i < n; ++i) alpha[i] = train.labels[i] == 1 ? 1.0 : -1.0;
  // Cholesky solve of (K + ridge I) alpha = y.
  for (std::size_t j = 0; j < n; ++j) {
    double s = gram[j * n + j];
    for (std::size_t k = 0; k < j; ++k) s -= gram[j * n + k] * gram[j * n + k];
    gram[j * n + j] = std::sqrt(s);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = gram[i * n + j];
      for (std::size_t k = 0; k < j; ++k) v -= gram[i * n + k] * gram[j * n + k];
      gram[i * n + j] = v / gram[j * n + j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) alpha[i] -= gram[i * n + k] * alpha[k];
    alpha[i] /= gram[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) alpha[i] -= gram[k * n + i] * alpha[k];
    alpha[i] /= gram[i * n + i];
  }
  std::vector<double> w(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < d; ++t) w[t] += alpha[i] * train.pixels[i * d + t];
  int correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    double score = 0.0;
    for (std::size_t t = 0; t < d; ++t) score += w[t] * test.pixels[i * d + t];
    if ((score > 0.0) == (test.labels[i] == 1)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("synthetic data is deterministic and balanced") {
  auto a = data::gen_synthetic(10, 100, 64, 7);
  auto b = data::gen_synthetic(10, 100, 64, 7);
  CHECK(a.size() == 1000);
  CHECK(a.pixels.size() == 1000u * 3 * 64 * 64);
  CHECK(std::memcmp(a.pixels.data(), b.pixels.data(), a.pixels.size() * sizeof(float)) == 0);
  CHECK(a.labels == b.labels);
  for (int c = 1; c <= 10; ++c) CHECK(std::count(a.labels.begin(), a.labels.end(), c) == 100);
  auto v = data::gen_synthetic(10, 100, 64, 7, data::Split::val);
  CHECK(v.pixels != a.pixels);
  CHECK(data::gen_synthetic(10, 100, 64, 8).pixels != a.pixels);
  const auto [lo, hi] = std::minmax_element(a.pixels.begin(), a.pixels.end());
  CHECK(*lo >= -1.0f);
  CHECK(*hi <= 1.0f);
  CHECK_THROWS_AS(data::gen_synthetic(10, 5, 8, 1), ValidationError);
  CHECK_THROWS_AS(data::gen_synthetic(1, 5, 32, 1), ValidationError);
}

TEST_CASE("synthetic classes are linearly separable on raw pixels") {
  auto train = data::gen_synthetic(2, 500, 64, 3);
  auto test = data::gen_synthetic(2, 100, 64, 3, data::Split::val);
  const double acc = linear_probe(train, test, 1.0);
  MESSAGE("linear probe accuracy " << acc);
  CHECK(acc > 0.9);
}

TEST_CASE("dataset batching and label filters") {
  auto d = data::gen_synthetic(3, 4, 16, 1);
  std::vector<std::size_t> idx{5, 0};
  auto t = d.batch(idx);
  CHECK(t.shape() == Shape{2, 3, 16, 16});
  CHECK(t[0] == d.pixels[5 * 768]);
  CHECK(d.indices_with_labels({3}) == std::vector<std::size_t>{8, 9, 10, 11});
  std::vector<std::size_t> bad{12};
  CHECK_THROWS_AS(d.batch(bad), ValidationError);
}

TEST_CASE("image files round trip and directory loading") {
  auto root = scratch_dir("images");
  auto d = data::gen_synthetic(3, 5, 16, 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto dir = root / ("cls_" + std::to_string(d.labels[i]));
    fs::create_directories(dir);
    auto img = data::to_image(d, i);
    if (i % 2)
      data::write_png(dir / ("img" + std::to_string(i) + ".png"), img);
    else
      data::write_ppm(dir / ("img" + std::to_string(i) + ".ppm"), img);
  }
  auto png = data::read_image(root / "cls_1" / "img1.png");
  CHECK(png.width == 16);
  CHECK(png.rgb == data::to_image(d, 1).rgb);
  auto ppm = data::read_image(root / "cls_1" / "img0.ppm");
  CHECK(ppm.rgb == data::to_image(d, 0).rgb);

  auto train = data::load_image_dir(root, 16, data::Split::train);
  auto val = data::load_image_dir(root, 16, data::Split::val);
  CHECK(train.num_classes == 3);
  CHECK(train.size() == 12);
  CHECK(val.size() == 3);
  CHECK(train.class_names == std::vector<std::string>{"cls_1", "cls_2", "cls_3"});
  // 8-bit quantization is the only loss
  float worst = 0.0f;
  for (std::size_t i = 0; i < 768; ++i) worst = std::max(worst, std::abs(train.pixels[i] - d.pixels[i]));
  CHECK(worst <= 1.0f / 255.0f + 1e-6f);

  auto up = data::load_image_dir(root, 32, data::Split::train);
  CHECK(up.height == 32);

  std::ofstream(root / "cls_1" / "broken.png") << "not a png";
  CHECK_THROWS_AS(data::load_image_dir(root, 16, data::Split::train), IoError);
  CHECK_THROWS_AS(data::load_image_dir(root / "missing", 16, data::Split::train), IoError);
}

TEST_CASE("data source strings") {
  auto s = data::parse_data_source("synthetic:10,100,64,7");
  CHECK(s.synthetic);
  CHECK(s.k == 10);
  CHECK(s.n_per_class == 100);
  CHECK(s.image_size == 64);
  CHECK(s.seed == 7);
  CHECK(s.to_string() == "synthetic:10,100,64,7");
  CHECK_FALSE(data::parse_data_source("/tmp/images").synthetic);
  CHECK_THROWS_AS(data::parse_data_source("synthetic:10,100"), ValidationError);
  CHECK_THROWS_AS(data::parse_data_source("synthetic:10,100,64,7,1"), ValidationError);
  CHECK(data::load(s, 64, data::Split::val).size() == 250);
  CHECK_THROWS_AS(data::load(s, 32, data::Split::val), ValidationError);
}

TEST_CASE("config validation") {
  train::TrainConfig c;
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.learning_rate = -1;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = c;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  CHECK(train::parse_augmentation("flip-crop") == train::Augmentation::flip_crop);
  CHECK_THROWS(train::parse_augmentation("randaugment"));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  auto m = micro(3);
  auto d = data::gen_synthetic(3, 4, 32, 1);
  train::TrainConfig cfg;
  cfg.learning_rate = 0.0;
  auto init = runtime::init_params(m, cfg.seed);
  train::Trainer t(m, init, cfg);
  std::vector<std::size_t> idx{0, 4, 8, 1};
  std::vector<int> labels{1, 2, 3, 1};
  const auto x = d.batch(idx);
  const double l1 = t.step(x, labels).loss;
  const double l2 = t.step(x, labels).loss;
  CHECK(l1 == l2);
  for (const auto& n : init.parameter_names()) CHECK(bitwise_equal(t.params().value(n), init.value(n)));
}

TEST_CASE("every parameter receives gradient") {
  auto m = micro(4);
  auto d = data::gen_synthetic(4, 3, 32, 5);
  train::Trainer t(m, runtime::init_params(m, 3), {});
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  t.step(d.batch(idx), d.labels);
  for (const auto& n : t.params().parameter_names()) {
    const auto& g = t.params().grad(n);
    CHECK_MESSAGE(std::any_of(g.data().begin(), g.data().end(), [](float v) { return v != 0.0f; }), n);
  }
}

TEST_CASE("a single sample is memorized") {
  auto m = micro(3);
  auto d = data::gen_synthetic(3, 1, 32, 9);
  train::Trainer t(m, runtime::init_params(m, 4), {});
  std::vector<std::size_t> idx{1};
  const auto x = d.batch(idx);
  std::vector<int> label{2};
  double first = t.step(x, label).loss, last = first;
  for (int i = 0; i < 40; ++i) last = t.step(x, label).loss;
  CHECK(last < 0.05);
  CHECK(last < first);
}

TEST_CASE("training is reproducible, checkpoints round trip, evaluation protocol") {
  auto m = micro(4);
  auto tr = data::gen_synthetic(4, 12, 32, 11);
  auto va = data::gen_synthetic(4, 6, 32, 11, data::Split::val);
  train::TrainConfig cfg;
  cfg.epochs = 16;
  cfg.batch_size = 8;
  cfg.seed = 21;
  cfg.augmentation = train::Augmentation::flip_crop;
  std::vector<int> epochs_seen;
  auto a = train::train(m, tr, &va, cfg, std::nullopt,
                        [&](const train::EpochMetrics& e) { epochs_seen.push_back(e.epoch); });
  auto b = train::train(m, tr, &va, cfg);
  CHECK(epochs_seen == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  CHECK(checkpoint_bytes(a.params) == checkpoint_bytes(b.params));
  CHECK(a.history.back().train_loss < a.history.front().train_loss);
  for (const auto& e : a.history) CHECK(e.val_top1 >= 0.0);

  auto path = scratch_dir("ckpt") / "micro.ckpt";
  save_checkpoint(a.params, path);
  auto loaded = load_checkpoint(path);
  CHECK(checkpoint_bytes(loaded) == checkpoint_bytes(a.params));

  // memorizes its own training split
  auto mem = train::evaluate(m, loaded, tr);
  MESSAGE("train-split accuracy " << mem.top1);
  CHECK(mem.top1 >= 0.9);

  // restricted evaluation: labels outside C are excluded, argmax over C
  auto cut = CutoutSet::parse("2-3", 4);
  train::EvalOptions only;
  only.classes = cut;
  auto restricted = train::evaluate(m, loaded, va, only);
  CHECK(restricted.total == 12);
  for (int p : restricted.predicted) CHECK((p == 2 || p == 3));
  auto via_cutout = train::evaluate(apply_cutout(m, cut), loaded, va);
  CHECK(via_cutout.correct == restricted.correct);
  CHECK(via_cutout.predicted == restricted.predicted);
  CHECK(bitwise_equal(via_cutout.probabilities, restricted.probabilities));

  // unit-gain attention reproduces the baseline exactly
  train::EvalOptions unit;
  unit.true_class_gain = 1.0f;
  auto base = train::evaluate(m, loaded, va);
  auto att = train::evaluate(m, loaded, va, unit);
  CHECK(att.correct == base.correct);
  CHECK(bitwise_equal(att.probabilities, base.probabilities));
  train::EvalOptions fixed;
  fixed.attention = {{2, 1.0f}, {4, 1.0f}};
  CHECK(bitwise_equal(train::evaluate(m, loaded, va, fixed).probabilities, base.probabilities));
}

TEST_CASE("untrained model is near chance") {
  auto m = micro(10);
  auto d = data::gen_synthetic(10, 30, 32, 13, data::Split::val);
  auto r = train::evaluate(m, runtime::init_params(m, 6), d);
  const double sigma = std::sqrt(0.1 * 0.9 / 300.0);
  MESSAGE("untrained accuracy " << r.top1);
  CHECK(std::abs(r.top1 - 0.1) <= 4 * sigma);
}

TEST_CASE("evaluation and training errors") {
  auto m = micro(3);
  auto p = runtime::init_params(m, 1);
  auto d = data::gen_synthetic(3, 2, 32, 1);
  auto only_three = d;
  only_three.labels.assign(only_three.labels.size(), 3);
  train::EvalOptions first_two;
  first_two.classes = CutoutSet::parse("1-2", 3);
  CHECK_THROWS_AS(train::evaluate(m, p, only_three, first_two), ValidationError);
  auto wide = data::gen_synthetic(5, 2, 32, 1);
  CHECK_THROWS_AS(train::evaluate(m, p, wide), ValidationError);

  train::TrainConfig boom;
  boom.learning_rate = 1e12;
  boom.epochs = 3;
  boom.batch_size = 3;
  CHECK_THROWS_AS(train::train(m, d, nullptr, boom), NumericError);
}
