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

#include "hlfp/autograd.hpp"

#include <cmath>

#include "hlfp/errors.hpp"

namespace hlfp::autograd {

void Node::accumulate(const Tensor& g) {
  if (grad_sink) {
    *grad_sink += g;
  } else if (grad.empty()) {
    grad = g;
  } else {
    grad += g;
  }
}

Variable constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Variable(std::move(n));
}

Variable parameter(const Tensor& value, Tensor* grad) {
  auto n = std::make_shared<Node>();
  n->borrowed = &value;
  n->grad_sink = grad;
  n->requires_grad = grad != nullptr;
  return Variable(std::move(n));
}

void Tape::backward(const Variable& root, const Tensor& seed) {
  if (!root.value().same_shape(seed))
    throw NumericError("backward seed shape " + shape_str(seed.shape()) +
                       " does not match root " + shape_str(root.value().shape()));
  root.node()->accumulate(seed);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.grad.empty() && n.backward) n.backward(n);
    n.backward = nullptr;
    n.grad = Tensor();
  }
  nodes_.clear();
}

namespace {

// Creates the output node and decides whether a closure must be recorded.
template <typename... Vars>
std::shared_ptr<Node> make_output(Tape* tape, Tensor value, const Vars&... inputs) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = tape != nullptr && (inputs.requires_grad() || ...);
  return n;
}

void finish(Tape* tape, const std::shared_ptr<Node>& out, std::function<void(Node&)> fn) {
  if (!out->requires_grad) return;
  out->backward = std::move(fn);
  tape->record(out);
}

}  // namespace

Variable conv2d(Tape* tape, const Variable& x, const Variable& w, const Variable* bias,
                const ops::Conv2dParams& p) {
  auto out = make_output(tape, ops::conv2d_forward(x.value(), w.value(),
                                                   bias ? &bias->value() : nullptr, p),
                         x, w);
  if (bias && bias->requires_grad() && tape) out->requires_grad = true;
  auto xn = x.node(), wn = w.node();
  auto bn = bias ? bias->node() : nullptr;
  finish(tape, out, [xn, wn, bn, p](Node& self) {
    auto g = ops::conv2d_backward(xn->val(), wn->val(), self.grad, bn != nullptr, p);
    if (xn->requires_grad) xn->accumulate(g.dx);
    if (wn->requires_grad) wn->accumulate(g.dw);
    if (bn && bn->requires_grad) bn->accumulate(g.db);
  });
  return Variable(out);
}

Variable batchnorm_train(Tape* tape, const Variable& x, const Variable& gamma,
                         const Variable& beta, Tensor& running_mean, Tensor& running_var) {
  auto cache = std::make_shared<ops::NormCache>();
  Tensor y = ops::batchnorm_train_forward(x.value(), gamma.value(), beta.value(), running_mean,
                                          running_var, cache.get());
  auto out = make_output(tape, std::move(y), x, gamma, beta);
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  finish(tape, out, [xn, gn, bn, cache](Node& self) {
    auto g = ops::batchnorm_backward(*cache, gn->val(), self.grad);
    if (xn->requires_grad) xn->accumulate(g.dx);
    if (gn->requires_grad) gn->accumulate(g.dgamma);
    if (bn->requires_grad) bn->accumulate(g.dbeta);
  });
  return Variable(out);
}

Variable batchnorm_infer(Tape* tape, const Variable& x, const Variable& gamma,
                         const Variable& beta, const Tensor& running_mean,
                         const Tensor& running_var) {
  auto out = make_output(tape,
                         ops::batchnorm_infer_forward(x.value(), gamma.value(), beta.value(),
                                                      running_mean, running_var),
                         x, gamma, beta);
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  finish(tape, out, [xn, gn, bn, rm = running_mean, rv = running_var](Node& self) {
    const Tensor& dy = self.grad;
    const Tensor& xv = xn->val();
    Tensor dx(dy.shape()), dgamma(gn->val().shape()), dbeta(bn->val().shape());
    const std::int64_t n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const float inv = 1.0f / std::sqrt(rv[k] + ops::kNormEpsilon);
      const float s = gn->val()[k] * inv;
      double dg = 0.0, db = 0.0;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < hw; ++i) {
          const auto at = (b * c + ch) * hw + i;
          const float g = dy.raw()[at];
          dx.raw()[at] = g * s;
          dg += static_cast<double>(g) * ((xv.raw()[at] - rm[k]) * inv);
          db += g;
        }
      dgamma[k] = static_cast<float>(dg);
      dbeta[k] = static_cast<float>(db);
    }
    if (xn->requires_grad) xn->accumulate(dx);
    if (gn->requires_grad) gn->accumulate(dgamma);
    if (bn->requires_grad) bn->accumulate(dbeta);
  });
  return Variable(out);
}

Variable relu(Tape* tape, const Variable& x) {
  auto out = make_output(tape, ops::relu_forward(x.value()), x);
  auto xn = x.node();
  Node* raw_out = out.get();
  finish(tape, out, [xn, raw_out](Node& self) {
    xn->accumulate(ops::relu_backward(raw_out->value, self.grad));
  });
  return Variable(out);
}

Variable maxpool(Tape* tape, const Variable& x, const ops::PoolParams& p) {
  auto r = ops::maxpool_forward(x.value(), p);
  auto out = make_output(tape, std::move(r.y), x);
  auto xn = x.node();
  auto argmax = std::make_shared<std::vector<std::int64_t>>(std::move(r.argmax));
  finish(tape, out, [xn, argmax](Node& self) {
    xn->accumulate(ops::maxpool_backward(xn->val().shape(), *argmax, self.grad));
  });
  return Variable(out);
}

Variable avgpool(Tape* tape, const Variable& x, const ops::PoolParams& p) {
  auto out = make_output(tape, ops::avgpool_forward(x.value(), p), x);
  auto xn = x.node();
  finish(tape, out, [xn, p](Node& self) {
    xn->accumulate(ops::avgpool_backward(xn->val().shape(), self.grad, p));
  });
  return Variable(out);
}

Variable global_avgpool(Tape* tape, const Variable& x) {
  auto out = make_output(tape, ops::global_avgpool_forward(x.value()), x);
  auto xn = x.node();
  finish(tape, out, [xn](Node& self) {
    xn->accumulate(ops::global_avgpool_backward(xn->val().shape(), self.grad));
  });
  return Variable(out);
}

Variable linear(Tape* tape, const Variable& x, const Variable& w, const Variable& b) {
  auto out = make_output(tape, ops::linear_forward(x.value(), w.value(), b.value()), x, w, b);
  auto xn = x.node(), wn = w.node(), bn = b.node();
  finish(tape, out, [xn, wn, bn](Node& self) {
    auto g = ops::linear_backward(xn->val(), wn->val(), self.grad);
    if (xn->requires_grad) xn->accumulate(g.dx);
    if (wn->requires_grad) wn->accumulate(g.dw);
    if (bn->requires_grad) bn->accumulate(g.db);
  });
  return Variable(out);
}

Variable add(Tape* tape, const Variable& a, const Variable& b) {
  auto out = make_output(tape, ops::add(a.value(), b.value()), a, b);
  auto an = a.node(), bn = b.node();
  finish(tape, out, [an, bn](Node& self) {
    if (an->requires_grad) an->accumulate(self.grad);
    if (bn->requires_grad) bn->accumulate(self.grad);
  });
  return Variable(out);
}

Variable scale(Tape* tape, const Variable& x, float gain) {
  auto out = make_output(tape, ops::scalar_scale(x.value(), gain), x);
  auto xn = x.node();
  finish(tape, out, [xn, gain](Node& self) {
    xn->accumulate(ops::scalar_scale(self.grad, gain));
  });
  return Variable(out);
}

Variable concat_columns(Tape* tape, std::span<const Variable> parts) {
  if (parts.empty()) throw NumericError("concat_columns: nothing to concatenate");
  const std::int64_t n = parts.front().value().dim(0);
  std::int64_t total = 0;
  for (const auto& v : parts) {
    if (v.value().rank() != 2 || v.value().dim(0) != n)
      throw NumericError("concat_columns: parts must be [N,c] with equal N");
    total += v.value().dim(1);
  }
  Tensor y({n, total});
  std::int64_t col = 0;
  bool any_grad = false;
  for (const auto& v : parts) {
    const std::int64_t c = v.value().dim(1);
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t j = 0; j < c; ++j) y.raw()[r * total + col + j] = v.value().raw()[r * c + j];
    col += c;
    any_grad = any_grad || v.requires_grad();
  }
  auto out = std::make_shared<Node>();
  out->value = std::move(y);
  out->requires_grad = tape != nullptr && any_grad;
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& v : parts) inputs.push_back(v.node());
  finish(tape, out, [inputs, total](Node& self) {
    const std::int64_t rows = self.grad.dim(0);
    std::int64_t offset = 0;
    for (const auto& in : inputs) {
      const std::int64_t c = in->val().dim(1);
      if (in->requires_grad) {
        Tensor g({rows, c});
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t j = 0; j < c; ++j) g.raw()[r * c + j] = self.grad.raw()[r * total + offset + j];
        in->accumulate(g);
      }
      offset += c;
    }
  });
  return Variable(out);
}

}  // namespace hlfp::autograd
