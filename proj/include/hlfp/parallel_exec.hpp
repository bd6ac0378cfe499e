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

// Branch-parallel inference: the trunk runs once, then superclass tiers and
// class branches are dispatched to a fixed worker pool and joined.

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "hlfp/arch_graph.hpp"
#include "hlfp/param_store.hpp"
#include "hlfp/runtime.hpp"

namespace hlfp::parallel {

class ThreadPool {
 public:
  explicit ThreadPool(int workers);
  ~ThreadPool();
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return static_cast<int>(threads_.size()); }

  /// Runs every task and blocks until all finished. The first exception
  /// thrown by a task is rethrown here after the join.
  void run_all(std::vector<std::function<void()>> tasks);

 private:
  void loop();

  std::vector<std::thread> threads_;
  std::queue<std::function<void()>> queue_;
  std::mutex mu_;
  std::condition_variable work_cv_;
  std::condition_variable done_cv_;
  std::size_t pending_ = 0;
  bool stop_ = false;
};

/// Single-threaded reference: trunk, superclasses in increasing index, then
/// branches in class order.
runtime::Logits infer_serial(const arch::ModelSpec& model, const ParamStore& params,
                             const Tensor& x, runtime::Trace* trace = nullptr);

/// Holds a pool bound to one model. Results are bitwise identical to
/// infer_serial for any worker count.
class Executor {
 public:
  Executor(arch::ModelSpec model, const ParamStore& params, int workers);

  runtime::Logits infer(const Tensor& x, runtime::Trace* trace = nullptr);
  /// Only the branches (and superclasses) needed by `classes`.
  runtime::Logits infer_classes(const Tensor& x, const std::vector<int>& classes,
                                runtime::Trace* trace = nullptr);

  int workers() const { return pool_.size(); }
  const arch::ModelSpec& model() const { return model_; }

 private:
  arch::ModelSpec model_;
  const ParamStore* params_;
  ThreadPool pool_;
};

enum class BenchMode { serial, parallel, single_branch };
std::string_view bench_mode_name(BenchMode m);
BenchMode parse_bench_mode(std::string_view text);

struct BenchConfig {
  BenchMode mode = BenchMode::serial;
  int warmup = 5;
  int iters = 30;
  int workers = 4;  // parallel mode only
  int batch = 1;
  std::uint64_t seed = 1;  // input tensor
};

struct BenchResult {
  BenchMode mode = BenchMode::serial;
  int workers = 1;
  int iters = 0;
  int batch = 1;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
  std::vector<double> samples_ms;
  std::uint64_t logits_hash = 0;  // of the benchmarked output
};

/// FNV-1a over the raw float bits; equal hashes for bitwise-equal tensors.
std::uint64_t tensor_hash(const Tensor& t);

/// single_branch times the trunk plus one branch path (class 1, through its
/// superclass when nested). For a serial model it is the whole network.
BenchResult bench(const arch::ModelSpec& model, const ParamStore& params,
                  const BenchConfig& config);

/// Nearest-rank percentile of unsorted samples, p in (0, 100].
double percentile(std::vector<double> samples, double p);
double median(std::vector<double> samples);

}  // namespace hlfp::parallel
