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

#include "hlfp/parallel_exec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <random>

#include "hlfp/errors.hpp"

namespace hlfp::parallel {

using arch::ModelSpec;
using autograd::Variable;
using runtime::Logits;

ThreadPool::ThreadPool(int workers) {
  if (workers < 1) throw ValidationError("worker count must be >= 1");
  threads_.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  work_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void ThreadPool::loop() {
  for (;;) {
    std::function<void()> task;
    {
      std::unique_lock lock(mu_);
      work_cv_.wait(lock, [this] { return stop_ || !queue_.empty(); });
      if (queue_.empty()) return;
      task = std::move(queue_.front());
      queue_.pop();
    }
    task();
    {
      std::lock_guard lock(mu_);
      --pending_;
    }
    done_cv_.notify_all();
  }
}

void ThreadPool::run_all(std::vector<std::function<void()>> tasks) {
  std::exception_ptr first;
  std::mutex err_mu;
  {
    std::lock_guard lock(mu_);
    for (auto& t : tasks) {
      queue_.push([&first, &err_mu, t = std::move(t)] {
        try {
          t();
        } catch (...) {
          std::lock_guard g(err_mu);
          if (!first) first = std::current_exception();
        }
      });
      ++pending_;
    }
  }
  work_cv_.notify_all();
  {
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
  }
  if (first) std::rethrow_exception(first);
}

namespace {

void copy_column(const Tensor& col, Tensor& out, std::size_t j) {
  const auto n = out.dim(0), w = out.dim(1);
  for (std::int64_t r = 0; r < n; ++r) out.raw()[r * w + static_cast<std::int64_t>(j)] = col.raw()[r];
}

std::vector<int> needed_superclasses(const ModelSpec& m, const std::vector<int>& classes) {
  std::vector<int> s;
  if (!m.is_nested()) return s;
  for (int c : classes) s.push_back(m.superclass_of(c));
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

// pool == nullptr runs everything on the calling thread.
Logits run_branches(const ModelSpec& m, const ParamStore& params, const Tensor& x,
                    const std::vector<int>& classes, ThreadPool* pool, runtime::Trace* trace) {
  runtime::check_input(m, x);
  runtime::check_classes(m, classes);
  const runtime::Context ctx{&m, &params, nullptr, nullptr};
  const Variable features = runtime::trunk_forward(ctx, autograd::constant(x));
  if (trace) ++trace->trunk_runs;
  if (!m.has_branches()) {
    if (classes != m.active_classes)
      throw ValidationError("serial model '" + m.name + "' cannot evaluate a class subset");
    return Logits{classes, features.value()};
  }

  const auto supers = needed_superclasses(m, classes);
  std::map<int, Variable> super_out;
  for (int j : supers) super_out.emplace(j, Variable{});
  auto super_task = [&](int j) { super_out.at(j) = runtime::superclass_forward(ctx, j, features); };
  if (pool) {
    std::vector<std::function<void()>> tasks;
    for (int j : supers) tasks.emplace_back([&, j] { super_task(j); });
    pool->run_all(std::move(tasks));
  } else {
    for (int j : supers) super_task(j);
  }
  if (trace) trace->superclasses.insert(trace->superclasses.end(), supers.begin(), supers.end());

  Logits out{classes, Tensor({x.dim(0), static_cast<std::int64_t>(classes.size())})};
  auto branch_task = [&](std::size_t col) {
    const int c = classes[col];
    const Variable& in = m.is_nested() ? super_out.at(m.superclass_of(c)) : features;
    copy_column(runtime::branch_forward(ctx, c, in).value(), out.values, col);
  };
  if (pool) {
    std::vector<std::function<void()>> tasks;
    for (std::size_t col = 0; col < classes.size(); ++col)
      tasks.emplace_back([&, col] { branch_task(col); });
    pool->run_all(std::move(tasks));
  } else {
    for (std::size_t col = 0; col < classes.size(); ++col) branch_task(col);
  }
  if (trace) trace->branches.insert(trace->branches.end(), classes.begin(), classes.end());
  return out;
}

}  // namespace

Logits infer_serial(const ModelSpec& model, const ParamStore& params, const Tensor& x,
                    runtime::Trace* trace) {
  arch::require_valid(model);
  runtime::check_params(model, params);
  return run_branches(model, params, x, model.active_classes, nullptr, trace);
}

Executor::Executor(ModelSpec model, const ParamStore& params, int workers)
    : model_(std::move(model)), params_(&params), pool_(workers) {
  arch::require_valid(model_);
  runtime::check_params(model_, params);
}

Logits Executor::infer(const Tensor& x, runtime::Trace* trace) {
  return run_branches(model_, *params_, x, model_.active_classes, &pool_, trace);
}

Logits Executor::infer_classes(const Tensor& x, const std::vector<int>& classes,
                               runtime::Trace* trace) {
  return run_branches(model_, *params_, x, classes, &pool_, trace);
}

std::string_view bench_mode_name(BenchMode m) {
  switch (m) {
    case BenchMode::serial: return "serial";
    case BenchMode::parallel: return "parallel";
    case BenchMode::single_branch: return "single_branch";
  }
  return "?";
}

BenchMode parse_bench_mode(std::string_view text) {
  if (text == "serial") return BenchMode::serial;
  if (text == "parallel") return BenchMode::parallel;
  if (text == "single_branch" || text == "single-branch") return BenchMode::single_branch;
  throw ValidationError("unknown bench mode '" + std::string(text) + "'");
}

double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) throw ValidationError("percentile of an empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw ValidationError("percentile must be in (0, 100]");
  std::sort(samples.begin(), samples.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(samples.size())));
  return samples[std::max<std::size_t>(rank, 1) - 1];
}

std::uint64_t tensor_hash(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.raw());
  for (std::size_t i = 0; i < static_cast<std::size_t>(t.numel()) * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

double median(std::vector<double> samples) {
  if (samples.empty()) throw ValidationError("median of an empty sample");
  std::sort(samples.begin(), samples.end());
  const auto n = samples.size();
  return n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

BenchResult bench(const ModelSpec& model, const ParamStore& params, const BenchConfig& config) {
  if (config.warmup < 5) throw ValidationError("bench needs at least 5 warmup iterations");
  if (config.iters < 30) throw ValidationError("bench needs at least 30 timed iterations");
  if (config.batch < 1) throw ValidationError("bench batch must be >= 1");
  arch::require_valid(model);
  runtime::check_params(model, params);

  Tensor x({config.batch, model.input.channels, model.input.height, model.input.width});
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  for (auto& v : x.data()) v = nd(rng);

  std::optional<Executor> exec;
  std::function<Logits()> once;
  switch (config.mode) {
    case BenchMode::serial:
      once = [&] { return run_branches(model, params, x, model.active_classes, nullptr, nullptr); };
      break;
    case BenchMode::parallel:
      exec.emplace(model, params, config.workers);
      once = [&] { return exec->infer(x); };
      break;
    case BenchMode::single_branch: {
      const std::vector<int> one = model.has_branches()
                                       ? std::vector<int>{model.active_classes.front()}
                                       : model.active_classes;
      once = [&, one] { return run_branches(model, params, x, one, nullptr, nullptr); };
      break;
    }
  }

  for (int i = 0; i < config.warmup; ++i) once();
  BenchResult r;
  r.mode = config.mode;
  r.workers = config.mode == BenchMode::parallel ? config.workers : 1;
  r.iters = config.iters;
  r.batch = config.batch;
  r.samples_ms.reserve(static_cast<std::size_t>(config.iters));
  Logits last;
  for (int i = 0; i < config.iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    last = once();
    r.samples_ms.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  r.mean_ms = std::accumulate(r.samples_ms.begin(), r.samples_ms.end(), 0.0) /
              static_cast<double>(r.samples_ms.size());
  r.median_ms = median(r.samples_ms);
  r.p95_ms = percentile(r.samples_ms, 95.0);
  r.logits_hash = tensor_hash(last.values);
  return r;
}

}  // namespace hlfp::parallel
