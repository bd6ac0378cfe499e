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

// Reverse-mode differentiation over the kernels in ops.hpp.
//
// A Variable is a handle to a graph node. When a Tape is supplied and any
// input requires a gradient, the op records a backward closure on the tape;
// with a null tape the op only computes its value, so inference paths build
// no graph and can run concurrently over shared parameters.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "hlfp/ops.hpp"
#include "hlfp/tensor.hpp"

namespace hlfp::autograd {

struct Node {
  Tensor value;
  const Tensor* borrowed = nullptr;  // parameter leaves view external storage
  Tensor* grad_sink = nullptr;       // parameter leaves accumulate here
  Tensor grad;
  bool requires_grad = false;
  std::function<void(Node&)> backward;

  const Tensor& val() const { return borrowed ? *borrowed : value; }
  void accumulate(const Tensor& g);
};

class Variable {
 public:
  Variable() = default;
  explicit Variable(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->val(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Variable constant(Tensor value);
/// Leaf that reads `value` in place; gradients go to `grad` when non-null.
Variable parameter(const Tensor& value, Tensor* grad);

class Tape {
 public:
  void record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds root's gradient and runs recorded closures in reverse order.
  /// Clears the tape afterwards.
  void backward(const Variable& root, const Tensor& seed);

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
};

Variable conv2d(Tape* tape, const Variable& x, const Variable& w, const Variable* bias,
                const ops::Conv2dParams& p);

/// Training-mode normalization (batch statistics, running stats updated).
Variable batchnorm_train(Tape* tape, const Variable& x, const Variable& gamma,
                         const Variable& beta, Tensor& running_mean, Tensor& running_var);
/// Inference-mode normalization using stored statistics.
Variable batchnorm_infer(Tape* tape, const Variable& x, const Variable& gamma,
                         const Variable& beta, const Tensor& running_mean,
                         const Tensor& running_var);

Variable relu(Tape* tape, const Variable& x);
Variable maxpool(Tape* tape, const Variable& x, const ops::PoolParams& p);
Variable avgpool(Tape* tape, const Variable& x, const ops::PoolParams& p);
Variable global_avgpool(Tape* tape, const Variable& x);
Variable linear(Tape* tape, const Variable& x, const Variable& w, const Variable& b);
Variable add(Tape* tape, const Variable& a, const Variable& b);
Variable scale(Tape* tape, const Variable& x, float gain);

/// Concatenate [N,c_i] matrices along columns.
Variable concat_columns(Tape* tape, std::span<const Variable> parts);

}  // namespace hlfp::autograd
