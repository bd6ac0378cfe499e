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

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hlfp/tensor.hpp"

namespace hlfp {

/// Named tensors of one model. Learnable parameters carry a gradient slot of
/// the same shape; buffers (normalization running statistics) do not.
///
/// Names encode ownership: "trunk.*", "super.<j>.*", "branch.<i>.*".
class ParamStore {
 public:
  void add_parameter(std::string name, Tensor value);
  void add_buffer(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  bool is_parameter(std::string_view name) const;

  const Tensor& value(std::string_view name) const;
  Tensor& mutable_value(std::string_view name);
  Tensor& grad(std::string_view name);
  const Tensor& grad(std::string_view name) const;

  /// Insertion order.
  const std::vector<std::string>& names() const { return names_; }
  std::vector<std::string> parameter_names() const;

  void zero_grad();
  std::int64_t parameter_count() const;
  std::size_t size() const { return names_.size(); }

  /// Tensors whose name starts with any of the prefixes, in insertion order.
  ParamStore subset(const std::vector<std::string>& prefixes) const;

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    bool parameter = false;
  };
  const Entry& entry(std::string_view name) const;
  Entry& entry(std::string_view name);

  std::vector<std::string> names_;
  std::unordered_map<std::string, Entry> entries_;
};

/// Buffers are recognised on load by their ".running_mean"/".running_var" suffix.
bool is_buffer_name(std::string_view name);

// Checkpoint layout (all integers little-endian):
//   "HLFP" | u32 version | u64 tensor count
//   per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims[rank] | f32 data[numel]
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const ParamStore& store, std::ostream& out);
ParamStore read_checkpoint(std::istream& in);
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace hlfp
