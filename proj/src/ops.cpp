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

#include "hlfp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hlfp/errors.hpp"

namespace hlfp::ops {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw NumericError(msg);
}

void require_rank4(const Tensor& t, const char* what) {
  require(t.rank() == 4, std::string(what) + " must be rank 4 [N,C,H,W], got " +
                             shape_str(t.shape()));
}

struct ConvGeometry {
  std::int64_t n, cin, h, w;
  std::int64_t cout, kh, kw;
  std::int64_t ho, wo;
  std::int64_t cin_g, cout_g;
  std::int64_t patch;  // cin_g * kh * kw
  bool pointwise;      // 1x1, stride 1, no padding: im2col is the identity
};

ConvGeometry geometry(const Tensor& x, const Tensor& w, const Conv2dParams& p) {
  require_rank4(x, "conv input");
  require_rank4(w, "conv weight");
  require(p.groups >= 1 && p.stride >= 1, "conv stride and groups must be >= 1");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  require(g.cin % p.groups == 0 && g.cout % p.groups == 0,
          "conv channels not divisible by groups");
  g.cin_g = g.cin / p.groups;
  g.cout_g = g.cout / p.groups;
  require(w.dim(1) == g.cin_g, "conv weight expects " + std::to_string(w.dim(1)) +
                                   " input channels per group, input has " +
                                   std::to_string(g.cin_g));
  g.ho = conv_out_extent(g.h, g.kh, p.stride, p.pad_h);
  g.wo = conv_out_extent(g.w, g.kw, p.stride, p.pad_w);
  g.patch = g.cin_g * g.kh * g.kw;
  g.pointwise = g.kh == 1 && g.kw == 1 && p.stride == 1 && p.pad_h == 0 && p.pad_w == 0;
  return g;
}

// cols[(c*kh+i)*kw+j][oh*wo+ow]
void im2col(const float* x, const ConvGeometry& g, const Conv2dParams& p, float* cols) {
  const std::int64_t hw_out = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    const float* plane = x + c * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        float* row = cols + ((c * g.kh + i) * g.kw + j) * hw_out;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * p.stride - p.pad_h + i;
          float* out = row + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(out, out + g.wo, 0.0f);
            continue;
          }
          const float* src = plane + ih * g.w;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * p.stride - p.pad_w + j;
            out[ow] = (iw >= 0 && iw < g.w) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* cols, const ConvGeometry& g, const Conv2dParams& p, float* dx) {
  const std::int64_t hw_out = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.cin_g; ++c) {
    float* plane = dx + c * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const float* row = cols + ((c * g.kh + i) * g.kw + j) * hw_out;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * p.stride - p.pad_h + i;
          if (ih < 0 || ih >= g.h) continue;
          float* dst = plane + ih * g.w;
          const float* src = row + oh * g.wo;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * p.stride - p.pad_w + j;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

void transpose(const float* src, std::int64_t rows, std::int64_t cols, float* dst) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

void require_finite(const Tensor& t, const char* what) {
  for (float v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value in ") + what);
}

}  // namespace

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel, int stride, int pad) {
  const std::int64_t span = in + 2 * static_cast<std::int64_t>(pad) - kernel;
  if (span < 0 || stride < 1)
    throw NumericError("kernel " + std::to_string(kernel) + " with pad " + std::to_string(pad) +
                       " does not fit input extent " + std::to_string(in));
  return span / stride + 1;
}

void gemm_accumulate(std::int64_t M, std::int64_t N, std::int64_t K, const float* A,
                     const float* B, float* C) {
  constexpr std::int64_t kColBlock = 256;
  for (std::int64_t j0 = 0; j0 < N; j0 += kColBlock) {
    const std::int64_t jn = std::min(kColBlock, N - j0);
    std::int64_t i = 0;
    for (; i + 4 <= M; i += 4) {
      float* __restrict c0 = C + (i + 0) * N + j0;
      float* __restrict c1 = C + (i + 1) * N + j0;
      float* __restrict c2 = C + (i + 2) * N + j0;
      float* __restrict c3 = C + (i + 3) * N + j0;
      const float* a0 = A + (i + 0) * K;
      const float* a1 = A + (i + 1) * K;
      const float* a2 = A + (i + 2) * K;
      const float* a3 = A + (i + 3) * K;
      for (std::int64_t p = 0; p < K; ++p) {
        const float* __restrict b = B + p * N + j0;
        const float v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
        for (std::int64_t j = 0; j < jn; ++j) {
          const float bj = b[j];
          c0[j] += v0 * bj;
          c1[j] += v1 * bj;
          c2[j] += v2 * bj;
          c3[j] += v3 * bj;
        }
      }
    }
    for (; i < M; ++i) {
      float* __restrict c = C + i * N + j0;
      const float* a = A + i * K;
      for (std::int64_t p = 0; p < K; ++p) {
        const float* __restrict b = B + p * N + j0;
        const float v = a[p];
        for (std::int64_t j = 0; j < jn; ++j) c[j] += v * b[j];
      }
    }
  }
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias,
                      const Conv2dParams& p) {
  const ConvGeometry g = geometry(x, w, p);
  if (bias) require(bias->numel() == g.cout, "conv bias length mismatch");
  Tensor y({g.n, g.cout, g.ho, g.wo});
  const std::int64_t hw_out = g.ho * g.wo;
  std::vector<float> cols(g.pointwise ? 0 : static_cast<std::size_t>(g.patch * hw_out));
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t grp = 0; grp < p.groups; ++grp) {
      const float* xin = x.raw() + (n * g.cin + grp * g.cin_g) * g.h * g.w;
      const float* b = xin;
      if (!g.pointwise) {
        im2col(xin, g, p, cols.data());
        b = cols.data();
      }
      float* yout = y.raw() + (n * g.cout + grp * g.cout_g) * hw_out;
      if (bias) {
        for (std::int64_t m = 0; m < g.cout_g; ++m)
          std::fill(yout + m * hw_out, yout + (m + 1) * hw_out, (*bias)[grp * g.cout_g + m]);
      }
      gemm_accumulate(g.cout_g, hw_out, g.patch, w.raw() + grp * g.cout_g * g.patch, b, yout);
    }
  }
  return y;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy, bool has_bias,
                            const Conv2dParams& p) {
  const ConvGeometry g = geometry(x, w, p);
  require(dy.shape() == Shape({g.n, g.cout, g.ho, g.wo}), "conv dy shape mismatch");
  const std::int64_t hw_out = g.ho * g.wo;
  Conv2dGrads out{Tensor(x.shape()), Tensor(w.shape()), {}};
  std::vector<float> cols(static_cast<std::size_t>(g.patch * hw_out));
  std::vector<float> cols_t(static_cast<std::size_t>(g.patch * hw_out));
  std::vector<float> dcols(g.pointwise ? 0 : static_cast<std::size_t>(g.patch * hw_out));
  std::vector<float> w_t(static_cast<std::size_t>(g.patch * g.cout_g));
  for (std::int64_t grp = 0; grp < p.groups; ++grp) {
    transpose(w.raw() + grp * g.cout_g * g.patch, g.cout_g, g.patch, w_t.data());
    for (std::int64_t n = 0; n < g.n; ++n) {
      const float* xin = x.raw() + (n * g.cin + grp * g.cin_g) * g.h * g.w;
      const float* dyb = dy.raw() + (n * g.cout + grp * g.cout_g) * hw_out;
      if (g.pointwise) {
        transpose(xin, g.patch, hw_out, cols_t.data());
      } else {
        im2col(xin, g, p, cols.data());
        transpose(cols.data(), g.patch, hw_out, cols_t.data());
      }
      gemm_accumulate(g.cout_g, g.patch, hw_out, dyb, cols_t.data(),
                      out.dw.raw() + grp * g.cout_g * g.patch);
      float* dxin = out.dx.raw() + (n * g.cin + grp * g.cin_g) * g.h * g.w;
      if (g.pointwise) {
        gemm_accumulate(g.patch, hw_out, g.cout_g, w_t.data(), dyb, dxin);
      } else {
        std::fill(dcols.begin(), dcols.end(), 0.0f);
        gemm_accumulate(g.patch, hw_out, g.cout_g, w_t.data(), dyb, dcols.data());
        col2im_add(dcols.data(), g, p, dxin);
      }
    }
  }
  if (has_bias) {
    out.db = Tensor({g.cout});
    for (std::int64_t c = 0; c < g.cout; ++c) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < g.n; ++n) {
        const float* d = dy.raw() + (n * g.cout + c) * hw_out;
        for (std::int64_t i = 0; i < hw_out; ++i) acc += d[i];
      }
      out.db[static_cast<std::size_t>(c)] = static_cast<float>(acc);
    }
  }
  return out;
}

namespace {

void check_norm_args(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_rank4(x, "normalization input");
  require(gamma.numel() == x.dim(1) && beta.numel() == x.dim(1),
          "normalization affine parameters do not match " + std::to_string(x.dim(1)) +
              " channels");
}

}  // namespace

Tensor batchnorm_train_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                               Tensor& running_mean, Tensor& running_var, NormCache* cache) {
  check_norm_args(x, gamma, beta);
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const std::int64_t count = n * hw;
  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<float> inv_std(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
      const float* src = x.raw() + (s * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) sum += src[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
      const float* src = x.raw() + (s * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double d = src[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    const double istd = 1.0 / std::sqrt(var + static_cast<double>(kNormEpsilon));
    inv_std[static_cast<std::size_t>(ch)] = static_cast<float>(istd);
    const float g = gamma[static_cast<std::size_t>(ch)];
    const float b = beta[static_cast<std::size_t>(ch)];
    const float m = static_cast<float>(mean);
    const float is = static_cast<float>(istd);
    for (std::int64_t s = 0; s < n; ++s) {
      const std::int64_t off = (s * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const float xh = (x.raw()[off + i] - m) * is;
        xhat.raw()[off + i] = xh;
        y.raw()[off + i] = g * xh + b;
      }
    }
    const double unbiased = count > 1 ? var * count / (count - 1) : var;
    auto& rm = running_mean[static_cast<std::size_t>(ch)];
    auto& rv = running_var[static_cast<std::size_t>(ch)];
    rm = (1.0f - kNormMomentum) * rm + kNormMomentum * static_cast<float>(mean);
    rv = (1.0f - kNormMomentum) * rv + kNormMomentum * static_cast<float>(unbiased);
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Tensor batchnorm_infer_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                               const Tensor& running_mean, const Tensor& running_var) {
  check_norm_args(x, gamma, beta);
  require(running_mean.numel() == x.dim(1) && running_var.numel() == x.dim(1),
          "normalization running statistics do not match channels");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y(x.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const auto k = static_cast<std::size_t>(ch);
    const float scale = gamma[k] / std::sqrt(running_var[k] + kNormEpsilon);
    const float shift = beta[k] - running_mean[k] * scale;
    for (std::int64_t s = 0; s < n; ++s) {
      const std::int64_t off = (s * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) y.raw()[off + i] = x.raw()[off + i] * scale + shift;
    }
  }
  return y;
}

NormGrads batchnorm_backward(const NormCache& cache, const Tensor& gamma, const Tensor& dy) {
  const Tensor& xhat = cache.xhat;
  require(xhat.same_shape(dy), "normalization dy shape mismatch");
  const std::int64_t n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
  const double count = static_cast<double>(n * hw);
  NormGrads g{Tensor(dy.shape()), Tensor({c}), Tensor({c})};
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::int64_t s = 0; s < n; ++s) {
      const std::int64_t off = (s * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        sum_dy += dy.raw()[off + i];
        sum_dy_xhat += static_cast<double>(dy.raw()[off + i]) * xhat.raw()[off + i];
      }
    }
    const auto k = static_cast<std::size_t>(ch);
    g.dbeta[k] = static_cast<float>(sum_dy);
    g.dgamma[k] = static_cast<float>(sum_dy_xhat);
    const double scale = static_cast<double>(gamma[k]) * cache.inv_std[k] / count;
    for (std::int64_t s = 0; s < n; ++s) {
      const std::int64_t off = (s * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        const double v =
            scale * (count * dy.raw()[off + i] - sum_dy - xhat.raw()[off + i] * sum_dy_xhat);
        g.dx.raw()[off + i] = static_cast<float>(v);
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const float v = x.raw()[i];
    y.raw()[i] = v > 0.0f ? v : 0.0f;
  }
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  require(y.same_shape(dy), "relu dy shape mismatch");
  Tensor dx(y.shape());
  for (std::int64_t i = 0; i < y.numel(); ++i) dx.raw()[i] = y.raw()[i] > 0.0f ? dy.raw()[i] : 0.0f;
  return dx;
}

MaxPoolResult maxpool_forward(const Tensor& x, const PoolParams& p) {
  require_rank4(x, "max-pool input");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = conv_out_extent(h, p.window, p.stride, p.pad);
  const std::int64_t wo = conv_out_extent(w, p.window, p.stride, p.pad);
  MaxPoolResult r{Tensor({n, c, ho, wo}), {}};
  r.argmax.resize(static_cast<std::size_t>(r.y.numel()));
  std::int64_t o = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const std::int64_t base = plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow, ++o) {
        float best = -std::numeric_limits<float>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t i = 0; i < p.window; ++i) {
          const std::int64_t ih = oh * p.stride - p.pad + i;
          if (ih < 0 || ih >= h) continue;
          for (std::int64_t j = 0; j < p.window; ++j) {
            const std::int64_t iw = ow * p.stride - p.pad + j;
            if (iw < 0 || iw >= w) continue;
            const std::int64_t idx = base + ih * w + iw;
            if (best_idx < 0 || x.raw()[idx] > best) {
              best = x.raw()[idx];
              best_idx = idx;
            }
          }
        }
        require(best_idx >= 0, "max-pool window covers only padding");
        r.y.raw()[o] = best;
        r.argmax[static_cast<std::size_t>(o)] = best_idx;
      }
    }
  }
  return r;
}

Tensor maxpool_backward(const Shape& x_shape, std::span<const std::int64_t> argmax,
                        const Tensor& dy) {
  require(static_cast<std::int64_t>(argmax.size()) == dy.numel(), "max-pool argmax mismatch");
  Tensor dx(x_shape);
  for (std::int64_t i = 0; i < dy.numel(); ++i) dx.raw()[argmax[static_cast<std::size_t>(i)]] += dy.raw()[i];
  return dx;
}

Tensor avgpool_forward(const Tensor& x, const PoolParams& p) {
  require_rank4(x, "average-pool input");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (p.window > h + 2 * p.pad || p.window > w + 2 * p.pad)
    throw NumericError("average-pool window " + std::to_string(p.window) +
                       " larger than input " + std::to_string(h) + "x" + std::to_string(w));
  const std::int64_t ho = conv_out_extent(h, p.window, p.stride, p.pad);
  const std::int64_t wo = conv_out_extent(w, p.window, p.stride, p.pad);
  Tensor y({n, c, ho, wo});
  std::int64_t o = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = x.raw() + plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow, ++o) {
        float acc = 0.0f;
        int cnt = 0;
        for (std::int64_t i = 0; i < p.window; ++i) {
          const std::int64_t ih = oh * p.stride - p.pad + i;
          if (ih < 0 || ih >= h) continue;
          for (std::int64_t j = 0; j < p.window; ++j) {
            const std::int64_t iw = ow * p.stride - p.pad + j;
            if (iw < 0 || iw >= w) continue;
            acc += src[ih * w + iw];
            ++cnt;
          }
        }
        y.raw()[o] = acc / static_cast<float>(cnt);
      }
    }
  }
  return y;
}

Tensor avgpool_backward(const Shape& x_shape, const Tensor& dy, const PoolParams& p) {
  Tensor dx(x_shape);
  const std::int64_t h = x_shape[2], w = x_shape[3];
  const std::int64_t ho = dy.dim(2), wo = dy.dim(3);
  std::int64_t o = 0;
  for (std::int64_t plane = 0; plane < x_shape[0] * x_shape[1]; ++plane) {
    float* dst = dx.raw() + plane * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow, ++o) {
        int cnt = 0;
        for (std::int64_t i = 0; i < p.window; ++i) {
          const std::int64_t ih = oh * p.stride - p.pad + i;
          for (std::int64_t j = 0; j < p.window; ++j) {
            const std::int64_t iw = ow * p.stride - p.pad + j;
            if (ih >= 0 && ih < h && iw >= 0 && iw < w) ++cnt;
          }
        }
        const float g = dy.raw()[o] / static_cast<float>(cnt);
        for (std::int64_t i = 0; i < p.window; ++i) {
          const std::int64_t ih = oh * p.stride - p.pad + i;
          if (ih < 0 || ih >= h) continue;
          for (std::int64_t j = 0; j < p.window; ++j) {
            const std::int64_t iw = ow * p.stride - p.pad + j;
            if (iw >= 0 && iw < w) dst[ih * w + iw] += g;
          }
        }
      }
    }
  }
  return dx;
}

Tensor global_avgpool_forward(const Tensor& x) {
  require_rank4(x, "global pool input");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y({n, c});
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* src = x.raw() + plane * hw;
    float acc = 0.0f;
    for (std::int64_t i = 0; i < hw; ++i) acc += src[i];
    y.raw()[plane] = acc / static_cast<float>(hw);
  }
  return y;
}

Tensor global_avgpool_backward(const Shape& x_shape, const Tensor& dy) {
  Tensor dx(x_shape);
  const std::int64_t hw = x_shape[2] * x_shape[3];
  for (std::int64_t plane = 0; plane < x_shape[0] * x_shape[1]; ++plane) {
    const float g = dy.raw()[plane] / static_cast<float>(hw);
    std::fill(dx.raw() + plane * hw, dx.raw() + (plane + 1) * hw, g);
  }
  return dx;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2, "linear expects [N,in] input and [out,in] weight");
  const std::int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  require(w.dim(1) == in, "linear weight expects " + std::to_string(w.dim(1)) +
                              " features, input has " + std::to_string(in));
  require(b.numel() == out, "linear bias length mismatch");
  Tensor y({n, out});
  for (std::int64_t s = 0; s < n; ++s) {
    const float* xr = x.raw() + s * in;
    for (std::int64_t o = 0; o < out; ++o) {
      const float* wr = w.raw() + o * in;
      float acc = 0.0f;
      for (std::int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      y.raw()[s * out + o] = acc + b.raw()[o];
    }
  }
  return y;
}

LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy) {
  const std::int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  require(dy.shape() == Shape({n, out}), "linear dy shape mismatch");
  LinearGrads g{Tensor(x.shape()), Tensor(w.shape()), Tensor({out})};
  for (std::int64_t s = 0; s < n; ++s) {
    const float* d = dy.raw() + s * out;
    const float* xr = x.raw() + s * in;
    float* dxr = g.dx.raw() + s * in;
    for (std::int64_t o = 0; o < out; ++o) {
      const float dv = d[o];
      const float* wr = w.raw() + o * in;
      float* dwr = g.dw.raw() + o * in;
      for (std::int64_t i = 0; i < in; ++i) {
        dxr[i] += dv * wr[i];
        dwr[i] += dv * xr[i];
      }
      g.db.raw()[o] += dv;
    }
  }
  return g;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
  Tensor y(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) y.raw()[i] = a.raw()[i] + b.raw()[i];
  return y;
}

Tensor scalar_scale(const Tensor& x, float gain) {
  if (!std::isfinite(gain)) throw NumericError("scalar_scale: gain must be finite");
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y.raw()[i] = x.raw()[i] * gain;
  return y;
}

Tensor softmax(const Tensor& logits, int sign) {
  require(logits.rank() == 2, "softmax expects [N,k] logits");
  require_finite(logits, "softmax logits");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  const double s = sign < 0 ? -1.0 : 1.0;
  Tensor p(logits.shape());
  for (std::int64_t r = 0; r < n; ++r) {
    const float* z = logits.raw() + r * k;
    double mx = s * z[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, s * z[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < k; ++j) sum += std::exp(s * z[j] - mx);
    for (std::int64_t j = 0; j < k; ++j)
      p.raw()[r * k + j] = static_cast<float>(std::exp(s * z[j] - mx) / sum);
  }
  return p;
}

CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require(logits.rank() == 2, "cross-entropy expects [N,k] logits");
  require_finite(logits, "cross-entropy logits");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  require(static_cast<std::int64_t>(targets.size()) == n, "cross-entropy target count mismatch");
  CrossEntropy ce{0.0f, Tensor(logits.shape())};
  double total = 0.0;
  for (std::int64_t r = 0; r < n; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    require(t >= 0 && t < k, "cross-entropy target out of range");
    const float* z = logits.raw() + r * k;
    double mx = z[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(z[j]));
    double sum = 0.0;
    for (std::int64_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const double log_sum = std::log(sum);
    total += -(z[t] - mx - log_sum);
    for (std::int64_t j = 0; j < k; ++j) {
      const double pj = std::exp(z[j] - mx - log_sum);
      ce.dlogits.raw()[r * k + j] = static_cast<float>((pj - (j == t ? 1.0 : 0.0)) / n);
    }
  }
  ce.loss = static_cast<float>(total / n);
  return ce;
}

}  // namespace hlfp::ops
