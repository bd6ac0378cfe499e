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

#include "hlfp/param_store.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <utility>

#include "hlfp/errors.hpp"

namespace hlfp {

void ParamStore::add_parameter(std::string name, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate tensor name: " + name);
  Entry e{std::move(value), {}, true};
  e.grad = Tensor(e.value.shape());
  names_.push_back(name);
  entries_.emplace(std::move(name), std::move(e));
}

void ParamStore::add_buffer(std::string name, Tensor value) {
  if (contains(name)) throw ValidationError("duplicate tensor name: " + name);
  names_.push_back(name);
  entries_.emplace(std::move(name), Entry{std::move(value), {}, false});
}

bool ParamStore::contains(std::string_view name) const {
  return entries_.find(std::string(name)) != entries_.end();
}

bool ParamStore::is_parameter(std::string_view name) const { return entry(name).parameter; }

const ParamStore::Entry& ParamStore::entry(std::string_view name) const {
  auto it = entries_.find(std::string(name));
  if (it == entries_.end()) throw ValidationError("missing parameter tensor: " + std::string(name));
  return it->second;
}

ParamStore::Entry& ParamStore::entry(std::string_view name) {
  auto it = entries_.find(std::string(name));
  if (it == entries_.end()) throw ValidationError("missing parameter tensor: " + std::string(name));
  return it->second;
}

const Tensor& ParamStore::value(std::string_view name) const { return entry(name).value; }
Tensor& ParamStore::mutable_value(std::string_view name) { return entry(name).value; }

Tensor& ParamStore::grad(std::string_view name) {
  auto& e = entry(name);
  if (!e.parameter) throw ValidationError("buffer has no gradient: " + std::string(name));
  return e.grad;
}

const Tensor& ParamStore::grad(std::string_view name) const {
  const auto& e = entry(name);
  if (!e.parameter) throw ValidationError("buffer has no gradient: " + std::string(name));
  return e.grad;
}

std::vector<std::string> ParamStore::parameter_names() const {
  std::vector<std::string> out;
  for (const auto& n : names_)
    if (entries_.at(n).parameter) out.push_back(n);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : entries_)
    if (e.parameter) e.grad.fill(0.0f);
}

std::int64_t ParamStore::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, e] : entries_)
    if (e.parameter) n += e.value.numel();
  return n;
}

ParamStore ParamStore::subset(const std::vector<std::string>& prefixes) const {
  ParamStore out;
  for (const auto& n : names_) {
    bool keep = false;
    for (const auto& p : prefixes) keep = keep || n.starts_with(p);
    if (!keep) continue;
    const auto& e = entries_.at(n);
    if (e.parameter)
      out.add_parameter(n, e.value);
    else
      out.add_buffer(n, e.value);
  }
  return out;
}

bool is_buffer_name(std::string_view name) {
  return name.ends_with(".running_mean") || name.ends_with(".running_var");
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  out.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), sizeof(T))) throw IoError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  T v;
  std::memcpy(&v, bytes.data(), sizeof(T));
  return v;
}

constexpr std::array<char, 4> kMagic{'H', 'L', 'F', 'P'};

}  // namespace

void write_checkpoint(const ParamStore& store, std::ostream& out) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, store.size());
  for (const auto& name : store.names()) {
    const Tensor& t = store.value(name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (float v : t.data()) put<float>(out, v);
  }
  if (!out) throw IoError("failed writing checkpoint");
}

ParamStore read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw IoError("not an HLFP checkpoint (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint64_t>(in);
  ParamStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    if (len == 0 || len > (1u << 16)) throw IoError("checkpoint tensor name length invalid");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError("checkpoint truncated");
    const auto rank = get<std::uint32_t>(in);
    if (rank < 1 || rank > 4) throw IoError("checkpoint tensor '" + name + "' has invalid rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r)
      shape.push_back(static_cast<std::int64_t>(get<std::uint64_t>(in)));
    std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = get<float>(in);
    Tensor t(std::move(shape), std::move(data));
    if (is_buffer_name(name))
      store.add_buffer(std::move(name), std::move(t));
    else
      store.add_parameter(std::move(name), std::move(t));
  }
  return store;
}

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(store, out);
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace hlfp
