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

#include "hlfp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "hlfp/errors.hpp"

namespace hlfp {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4)
    throw NumericError("tensor rank must be 1..4, got " + shape_str(shape));
  for (auto d : shape)
    if (d < 1) throw NumericError("tensor dims must be >= 1, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
    throw NumericError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
}

float& Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
  return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

float Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw NumericError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (!same_shape(other))
    throw NumericError("shape mismatch in accumulate: " + shape_str(shape_) + " vs " +
                       shape_str(other.shape_));
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.raw(), b.raw(), static_cast<std::size_t>(a.numel()) * sizeof(float)) == 0;
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
  if (!a.same_shape(b)) throw NumericError("max_relative_error: shape mismatch");
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double x = a[static_cast<std::size_t>(i)];
    const double y = b[static_cast<std::size_t>(i)];
    worst = std::max(worst, std::abs(x - y) / std::max(std::abs(y), floor));
  }
  return worst;
}

Tensor stack(std::span<const Tensor> samples) {
  if (samples.empty()) throw NumericError("stack: no samples");
  Shape shape{static_cast<std::int64_t>(samples.size())};
  for (auto d : samples.front().shape()) shape.push_back(d);
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(shape_numel(shape)));
  for (const auto& s : samples) {
    if (!s.same_shape(samples.front())) throw NumericError("stack: ragged sample shapes");
    data.insert(data.end(), s.data().begin(), s.data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor slice_batch(const Tensor& t, std::int64_t begin, std::int64_t count) {
  if (begin < 0 || count < 1 || begin + count > t.dim(0))
    throw NumericError("slice_batch out of range");
  Shape shape = t.shape();
  shape[0] = count;
  const std::int64_t row = t.numel() / t.dim(0);
  std::vector<float> data(t.data().begin() + begin * row, t.data().begin() + (begin + count) * row);
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace hlfp
