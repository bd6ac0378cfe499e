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

// SGD training with a softmax cross-entropy over all class logits, and
// top-1 evaluation (optionally restricted to a class subset).

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hlfp/arch_graph.hpp"
#include "hlfp/dataset.hpp"
#include "hlfp/param_store.hpp"
#include "hlfp/runtime.hpp"

namespace hlfp::train {

enum class Augmentation { none, flip_crop };
std::string_view augmentation_name(Augmentation a);
Augmentation parse_augmentation(std::string_view text);

struct TrainConfig {
  int epochs = 12;
  int batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;  // conv and linear weights only
  std::uint64_t seed = 1;
  Augmentation augmentation = Augmentation::none;

  /// Throws ValidationError on the first out-of-range field.
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_top1 = 0.0;
  double val_top1 = -1.0;  // -1 when no val split was given
  double seconds = 0.0;
};

struct StepResult {
  double loss = 0.0;
  int correct = 0;
};

/// One optimizer over one model. Gradients of the latest step stay readable
/// in params() until the next step.
class Trainer {
 public:
  Trainer(arch::ModelSpec model, ParamStore params, TrainConfig config);

  /// labels are 1-based class indices of the model.
  StepResult step(const Tensor& x, std::span<const int> labels);

  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  ParamStore release() { return std::move(params_); }
  const arch::ModelSpec& model() const { return model_; }

 private:
  arch::ModelSpec model_;
  ParamStore params_;
  TrainConfig config_;
  std::map<std::string, Tensor> velocity_;
  std::set<std::string> decayed_;
  std::int64_t steps_ = 0;
};

struct TrainResult {
  ParamStore params;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Initializes from `config.seed` unless `initial` is given. The whole run is
/// a function of (model, data, config): same inputs give a bitwise-identical
/// checkpoint.
TrainResult train(const arch::ModelSpec& model, const data::Dataset& train_set,
                  const data::Dataset* val_set, const TrainConfig& config,
                  std::optional<ParamStore> initial = std::nullopt,
                  const EpochCallback& on_epoch = {});

struct EvalResult {
  double top1 = 0.0;
  std::int64_t correct = 0;
  std::int64_t total = 0;
  std::vector<std::size_t> samples;  // dataset indices evaluated
  std::vector<int> predicted;        // class per evaluated sample
  Tensor probabilities;              // [total, |classes|], subset softmax
  std::vector<int> classes;
};

struct EvalOptions {
  std::optional<arch::CutoutSet> classes;  // restrict labels and argmax to C
  std::vector<runtime::AttentionDirective> attention;  // distinct targets
  /// Scale each sample's own true-class branch by this gain at
  /// true_class_stage. Replaces `attention`.
  std::optional<float> true_class_gain;
  std::string true_class_stage = "conv5";
  runtime::SoftmaxSign sign = runtime::SoftmaxSign::positive;
  int batch_size = 64;
};

/// Samples whose label is outside the evaluated classes are skipped.
/// Throws ValidationError when nothing is left to evaluate.
EvalResult evaluate(const arch::ModelSpec& model, const ParamStore& params,
                    const data::Dataset& dataset, const EvalOptions& options = {});

/// Random horizontal flip and a random crop from a 4-pixel zero-padded copy.
Tensor augment(const Tensor& batch, std::uint64_t seed);

}  // namespace hlfp::train
