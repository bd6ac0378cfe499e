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

#include "hlfp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "hlfp/errors.hpp"
#include "hlfp/ops.hpp"

namespace hlfp::train {

using arch::ModelSpec;
using autograd::Variable;

namespace {

constexpr int kCropPad = 4;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void check_labels(const ModelSpec& model, const data::Dataset& d) {
  if (d.num_classes > model.num_classes)
    throw ValidationError("dataset has " + std::to_string(d.num_classes) +
                          " classes but the model has " + std::to_string(model.num_classes));
  for (int l : d.labels)
    if (l < 1 || l > model.num_classes)
      throw ValidationError("label " + std::to_string(l) + " outside 1.." +
                            std::to_string(model.num_classes));
}

}  // namespace

std::string_view augmentation_name(Augmentation a) {
  return a == Augmentation::none ? "none" : "flip_crop";
}

Augmentation parse_augmentation(std::string_view text) {
  if (text == "none") return Augmentation::none;
  if (text == "flip_crop" || text == "flip-crop") return Augmentation::flip_crop;
  throw ValidationError("unknown augmentation '" + std::string(text) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!std::isfinite(learning_rate) || learning_rate < 0.0)
    throw ValidationError("learning_rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  if (!std::isfinite(weight_decay) || weight_decay < 0.0)
    throw ValidationError("weight_decay must be finite and >= 0");
}

Trainer::Trainer(ModelSpec model, ParamStore params, TrainConfig config)
    : model_(std::move(model)), params_(std::move(params)), config_(config) {
  config_.validate();
  runtime::check_params(model_, params_);
  for (const auto& n : params_.parameter_names()) {
    velocity_.emplace(n, Tensor(params_.value(n).shape()));
    if (n.ends_with(".weight") && params_.value(n).rank() >= 2) decayed_.insert(n);
  }
}

StepResult Trainer::step(const Tensor& x, std::span<const int> labels) {
  if (x.rank() != 4 || x.dim(0) != static_cast<std::int64_t>(labels.size()))
    throw ValidationError("batch and label counts differ");
  const auto& classes = model_.active_classes;
  std::vector<int> targets;
  targets.reserve(labels.size());
  for (int l : labels) {
    auto it = std::find(classes.begin(), classes.end(), l);
    if (it == classes.end())
      throw ValidationError("label " + std::to_string(l) + " is not an active class");
    targets.push_back(static_cast<int>(it - classes.begin()));
  }

  params_.zero_grad();
  autograd::Tape tape;
  runtime::Context ctx{&model_, &params_, &params_, &tape};
  const Variable logits = runtime::forward_classes(ctx, autograd::constant(x), classes);
  const auto ce = ops::softmax_cross_entropy(logits.value(), targets);
  if (!std::isfinite(ce.loss))
    throw NumericError("non-finite training loss at step " + std::to_string(steps_));
  tape.backward(logits, ce.dlogits);

  const auto lr = static_cast<float>(config_.learning_rate);
  const auto mu = static_cast<float>(config_.momentum);
  const auto wd = static_cast<float>(config_.weight_decay);
  for (auto& [name, v] : velocity_) {
    Tensor& w = params_.mutable_value(name);
    const Tensor& g = params_.grad(name);
    const bool decay = decayed_.count(name) != 0;
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const auto k = static_cast<std::size_t>(i);
      float grad = g[k];
      if (decay) grad += wd * w[k];
      v[k] = mu * v[k] + grad;
      w[k] -= lr * v[k];
    }
  }
  ++steps_;

  StepResult r{ce.loss, 0};
  const auto k = static_cast<std::int64_t>(classes.size());
  for (std::size_t row = 0; row < targets.size(); ++row) {
    const float* z = logits.value().raw() + static_cast<std::int64_t>(row) * k;
    const auto best = std::max_element(z, z + k) - z;
    if (best == targets[row]) ++r.correct;
  }
  return r;
}

Tensor augment(const Tensor& batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> shift(-kCropPad, kCropPad);
  std::bernoulli_distribution flip(0.5);
  Tensor out(batch.shape());
  const auto n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  for (std::int64_t s = 0; s < n; ++s) {
    const bool f = flip(rng);
    const int dy = shift(rng), dx = shift(rng);
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
          const std::int64_t sy = y + dy;
          std::int64_t sx = x + dx;
          if (f) sx = w - 1 - sx;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
          out.at(s, ch, y, x) = batch.at(s, ch, sy, sx);
        }
  }
  return out;
}

TrainResult train(const ModelSpec& model, const data::Dataset& train_set,
                  const data::Dataset* val_set, const TrainConfig& config,
                  std::optional<ParamStore> initial, const EpochCallback& on_epoch) {
  config.validate();
  arch::require_valid(model);
  check_labels(model, train_set);
  if (train_set.size() == 0) throw ValidationError("training set is empty");
  if (val_set) check_labels(model, *val_set);

  Trainer trainer(model, initial ? std::move(*initial) : runtime::init_params(model, config.seed),
                  config);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(mix(config.seed, 0x5f1e));

  TrainResult result;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::int64_t seen = 0, correct = 0;
    for (std::size_t start = 0, b = 0; start < order.size(); start += bs, ++b) {
      const std::size_t count = std::min(bs, order.size() - start);
      // a trailing single sample would normalize over one element
      if (count == 1 && order.size() > 1) break;
      const std::span<const std::size_t> idx(order.data() + start, count);
      Tensor x = train_set.batch(idx);
      if (config.augmentation == Augmentation::flip_crop)
        x = augment(x, mix(mix(config.seed, static_cast<std::uint64_t>(epoch)), b));
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train_set.labels[i]);
      StepResult s;
      try {
        s = trainer.step(x, labels);
      } catch (const NumericError& e) {
        throw NumericError("training diverged in epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b + 1) + ": " + e.what());
      }
      loss_sum += s.loss * static_cast<double>(count);
      correct += s.correct;
      seen += static_cast<std::int64_t>(count);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_top1 = static_cast<double>(correct) / static_cast<double>(seen);
    if (val_set) m.val_top1 = evaluate(model, trainer.params(), *val_set).top1;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.params = trainer.release();
  return result;
}

EvalResult evaluate(const ModelSpec& model, const ParamStore& params, const data::Dataset& dataset,
                    const EvalOptions& options) {
  arch::require_valid(model);
  runtime::check_params(model, params);
  check_labels(model, dataset);
  if (options.batch_size < 1) throw ValidationError("evaluation batch size must be >= 1");

  const std::vector<int> classes =
      options.classes ? options.classes->classes() : model.active_classes;
  for (int c : classes)
    if (std::find(model.active_classes.begin(), model.active_classes.end(), c) ==
        model.active_classes.end())
      throw ValidationError("class " + std::to_string(c) + " is not active in model '" +
                            model.name + "'");
  if (options.true_class_gain && !options.attention.empty())
    throw ValidationError("true-class attention cannot be combined with fixed directives");
  runtime::check_attention(model, options.attention);

  EvalResult r;
  r.classes = classes;
  r.samples = dataset.indices_with_labels(classes);
  if (r.samples.empty()) throw ValidationError("no samples left to evaluate");
  r.total = static_cast<std::int64_t>(r.samples.size());
  r.predicted.assign(r.samples.size(), 0);
  r.probabilities = Tensor({r.total, static_cast<std::int64_t>(classes.size())});

  // Batches of positions into r.samples; in true-class mode each batch holds one label.
  std::vector<std::pair<std::vector<std::size_t>, std::vector<runtime::AttentionDirective>>> jobs;
  const auto bs = static_cast<std::size_t>(options.batch_size);
  if (options.true_class_gain) {
    for (int c : classes) {
      std::vector<std::size_t> pos;
      for (std::size_t i = 0; i < r.samples.size(); ++i)
        if (dataset.labels[r.samples[i]] == c) pos.push_back(i);
      const std::vector<runtime::AttentionDirective> d{
          {c, *options.true_class_gain, options.true_class_stage}};
      runtime::check_attention(model, d);
      for (std::size_t s = 0; s < pos.size(); s += bs)
        jobs.emplace_back(std::vector<std::size_t>(pos.begin() + static_cast<std::ptrdiff_t>(s),
                                                   pos.begin() + static_cast<std::ptrdiff_t>(
                                                                     std::min(pos.size(), s + bs))),
                          d);
    }
  } else {
    for (std::size_t s = 0; s < r.samples.size(); s += bs) {
      std::vector<std::size_t> pos(std::min(bs, r.samples.size() - s));
      std::iota(pos.begin(), pos.end(), s);
      jobs.emplace_back(std::move(pos), options.attention);
    }
  }

  const runtime::Context ctx{&model, &params, nullptr, nullptr};
  const auto width = classes.size();
  for (const auto& [pos, directive] : jobs) {
    if (pos.empty()) continue;
    std::vector<std::size_t> idx;
    for (auto p : pos) idx.push_back(r.samples[p]);
    const Tensor x = dataset.batch(idx);
    const Variable out =
        runtime::forward_classes(ctx, autograd::constant(x), model.active_classes, directive);
    const runtime::Logits sub =
        runtime::restrict_to(runtime::Logits{model.active_classes, out.value()}, classes);
    const auto pred = runtime::argmax_classes(sub);
    const Tensor probs = runtime::subset_softmax(sub, options.sign);
    for (std::size_t j = 0; j < pos.size(); ++j) {
      r.predicted[pos[j]] = pred[j];
      if (pred[j] == dataset.labels[idx[j]]) ++r.correct;
      std::copy_n(probs.raw() + j * width, width, r.probabilities.raw() + pos[j] * width);
    }
  }
  r.top1 = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

}  // namespace hlfp::train
