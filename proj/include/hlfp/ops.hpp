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

// Forward/backward numeric kernels. All functions are pure with respect to
// their inputs except the training-mode normalization, which updates the
// running statistics it is handed. Reductions use a fixed summation order so
// identical inputs give bitwise-identical outputs.

#include <cstdint>
#include <span>
#include <vector>

#include "hlfp/tensor.hpp"

namespace hlfp::ops {

inline constexpr float kNormEpsilon = 1e-5f;
inline constexpr float kNormMomentum = 0.1f;

struct Conv2dParams {
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  int groups = 1;
};

/// Output spatial extent; throws NumericError when it would be < 1.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int pad);

/// x: [N,Cin,H,W], w: [Cout,Cin/groups,KH,KW], bias: [Cout] or null.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias,
                      const Conv2dParams& p);

struct Conv2dGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;  // empty when the conv has no bias
};
Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, bool has_bias,
                            const Conv2dParams& p);

struct NormCache {
  Tensor xhat;
  std::vector<float> inv_std;
};

/// Batch statistics over (N,H,W) per channel; updates running stats with
/// momentum 0.1 (unbiased variance for the running estimate).
Tensor batchnorm_train_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                               Tensor& running_mean, Tensor& running_var, NormCache* cache);
Tensor batchnorm_infer_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                               const Tensor& running_mean, const Tensor& running_var);

struct NormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
NormGrads batchnorm_backward(const NormCache& cache, const Tensor& gamma, const Tensor& dy);

Tensor relu_forward(const Tensor& x);
/// Gradient mask taken from the forward output (y > 0).
Tensor relu_backward(const Tensor& y, const Tensor& dy);

struct PoolParams {
  int window = 3;
  int stride = 2;
  int pad = 0;
};

struct MaxPoolResult {
  Tensor y;
  std::vector<std::int64_t> argmax;  // flat input index per output element
};
MaxPoolResult maxpool_forward(const Tensor& x, const PoolParams& p);
Tensor maxpool_backward(const Shape& x_shape, std::span<const std::int64_t> argmax,
                        const Tensor& dy);

/// Padding cells are excluded from the divisor. Window larger than the
/// padded input is an error.
Tensor avgpool_forward(const Tensor& x, const PoolParams& p);
Tensor avgpool_backward(const Shape& x_shape, const Tensor& dy, const PoolParams& p);

/// [N,C,H,W] -> [N,C]
Tensor global_avgpool_forward(const Tensor& x);
Tensor global_avgpool_backward(const Shape& x_shape, const Tensor& dy);

/// x: [N,in], w: [out,in], b: [out] -> [N,out]
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
struct LinearGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy);

Tensor add(const Tensor& a, const Tensor& b);

Tensor scalar_scale(const Tensor& x, float gain);

/// Row-wise softmax of [N,k]; sign=-1 evaluates exp(-f) / sum exp(-f).
Tensor softmax(const Tensor& logits, int sign = +1);

struct CrossEntropy {
  float loss = 0.0f;  // mean over the batch
  Tensor dlogits;     // d(mean loss)/d logits
};
/// targets are column positions 0..k-1.
CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);

/// C[M,N] += A[M,K] * B[K,N], row-major, accumulation over K in index order.
void gemm_accumulate(std::int64_t M, std::int64_t N, std::int64_t K, const float* A,
                     const float* B, float* C);

}  // namespace hlfp::ops
