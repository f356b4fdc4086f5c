// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "machgen/common.hpp"
#include "machgen/tensor.hpp"

// Layer primitives for the denoiser: forward passes plus exact hand-written
// backward passes. Activations are (C, H, W) tensors; token matrices are
// (N, D). Backward functions accumulate into parameter gradients (+=) and
// assign input gradients.

namespace machgen::nn {

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding, same output size.
// x: (Ci, H, W), w: (Co, Ci, 3, 3), b: (Co) -> y: (Co, H, W)
// ---------------------------------------------------------------------------

inline Tensor conv3x3_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0);
  require(w.shape.size() == 4 && w.dim(1) == ci && w.dim(2) == 3 && w.dim(3) == 3,
          "conv3x3 weight shape mismatch");
  require(b.size() == co, "conv3x3 bias shape mismatch");
  Tensor y({co, h, wd});
  for (std::size_t oc = 0; oc < co; ++oc) {
    double* yc = &y.v[oc * h * wd];
    const double bias = b.v[oc];
    for (std::size_t i = 0; i < h * wd; ++i) yc[i] = bias;
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double* xc = &x.v[ic * h * wd];
      const double* wk = &w.v[((oc * ci) + ic) * 9];
      for (int kh = -1; kh <= 1; ++kh) {
        for (int kw = -1; kw <= 1; ++kw) {
          const double kval = wk[(kh + 1) * 3 + (kw + 1)];
          if (kval == 0.0) continue;
          for (std::size_t r = 0; r < h; ++r) {
            const long sr = static_cast<long>(r) + kh;
            if (sr < 0 || sr >= static_cast<long>(h)) continue;
            const double* xrow = xc + static_cast<std::size_t>(sr) * wd;
            double* yrow = yc + r * wd;
            const std::size_t c0 = kw < 0 ? 1 : 0;
            const std::size_t c1 = kw > 0 ? wd - 1 : wd;
            for (std::size_t cidx = c0; cidx < c1; ++cidx)
              yrow[cidx] += kval * xrow[cidx + kw];
          }
        }
      }
    }
  }
  return y;
}

inline void conv3x3_bwd(const Tensor& x, const Tensor& w, const Tensor& dy,
                        Tensor& dx, Tensor& dw, Tensor& db) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0);
  require(dy.shape.size() == 3 && dy.dim(0) == co && dy.dim(1) == h &&
              dy.dim(2) == wd,
          "conv3x3 upstream gradient shape mismatch");
  dx = Tensor(x.shape);
  for (std::size_t oc = 0; oc < co; ++oc) {
    const double* dyc = &dy.v[oc * h * wd];
    double acc = 0.0;
    for (std::size_t i = 0; i < h * wd; ++i) acc += dyc[i];
    db.v[oc] += acc;
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double* xc = &x.v[ic * h * wd];
      double* dxc = &dx.v[ic * h * wd];
      const double* wk = &w.v[((oc * ci) + ic) * 9];
      double* dwk = &dw.v[((oc * ci) + ic) * 9];
      for (int kh = -1; kh <= 1; ++kh) {
        for (int kw = -1; kw <= 1; ++kw) {
          const double kval = wk[(kh + 1) * 3 + (kw + 1)];
          double grad_k = 0.0;
          for (std::size_t r = 0; r < h; ++r) {
            const long sr = static_cast<long>(r) + kh;
            if (sr < 0 || sr >= static_cast<long>(h)) continue;
            const double* xrow = xc + static_cast<std::size_t>(sr) * wd;
            double* dxrow = dxc + static_cast<std::size_t>(sr) * wd;
            const double* dyrow = dyc + r * wd;
            const std::size_t c0 = kw < 0 ? 1 : 0;
            const std::size_t c1 = kw > 0 ? wd - 1 : wd;
            for (std::size_t cidx = c0; cidx < c1; ++cidx) {
              grad_k += xrow[cidx + kw] * dyrow[cidx];
              dxrow[cidx + kw] += kval * dyrow[cidx];
            }
          }
          dwk[(kh + 1) * 3 + (kw + 1)] += grad_k;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 1x1 convolution (per-position channel mix), used for residual shortcuts.
// x: (Ci, H, W), w: (Co, Ci) -> y: (Co, H, W)
// ---------------------------------------------------------------------------

inline Tensor conv1x1_fwd(const Tensor& x, const Tensor& w) {
  const std::size_t ci = x.dim(0), spatial = x.dim(1) * x.dim(2);
  const std::size_t co = w.dim(0);
  require(w.dim(1) == ci, "conv1x1 weight shape mismatch");
  Tensor y({co, x.dim(1), x.dim(2)});
  for (std::size_t oc = 0; oc < co; ++oc) {
    double* yc = &y.v[oc * spatial];
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double k = w.v[oc * ci + ic];
      if (k == 0.0) continue;
      const double* xc = &x.v[ic * spatial];
      for (std::size_t i = 0; i < spatial; ++i) yc[i] += k * xc[i];
    }
  }
  return y;
}

inline void conv1x1_bwd(const Tensor& x, const Tensor& w, const Tensor& dy,
                        Tensor& dx, Tensor& dw) {
  const std::size_t ci = x.dim(0), spatial = x.dim(1) * x.dim(2);
  const std::size_t co = w.dim(0);
  dx = Tensor(x.shape);
  for (std::size_t oc = 0; oc < co; ++oc) {
    const double* dyc = &dy.v[oc * spatial];
    for (std::size_t ic = 0; ic < ci; ++ic) {
      const double k = w.v[oc * ci + ic];
      const double* xc = &x.v[ic * spatial];
      double* dxc = &dx.v[ic * spatial];
      double acc = 0.0;
      for (std::size_t i = 0; i < spatial; ++i) {
        acc += xc[i] * dyc[i];
        dxc[i] += k * dyc[i];
      }
      dw.v[oc * ci + ic] += acc;
    }
  }
}

// ---------------------------------------------------------------------------
// Group normalization over (C, H, W), population variance, eps 1e-5.
// ---------------------------------------------------------------------------

inline constexpr double kGnEps = 1e-5;

struct GroupNormCache {
  Tensor x_hat;                 // normalized input
  std::vector<double> inv_std;  // per group
  std::size_t groups = 0;
};

inline Tensor groupnorm_fwd(const Tensor& x, const Tensor& gamma,
                            const Tensor& beta, std::size_t groups,
                            GroupNormCache& cache) {
  const std::size_t c = x.dim(0), spatial = x.dim(1) * x.dim(2);
  require(c % groups == 0, "channel count not divisible by group count");
  require(gamma.size() == c && beta.size() == c, "groupnorm affine mismatch");
  const std::size_t gs = c / groups;
  cache.groups = groups;
  cache.inv_std.assign(groups, 0.0);
  cache.x_hat = Tensor(x.shape);
  Tensor y(x.shape);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t base = g * gs * spatial;
    const std::size_t m = gs * spatial;
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += x.v[base + i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = x.v[base + i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + kGnEps);
    cache.inv_std[g] = inv;
    for (std::size_t cc = 0; cc < gs; ++cc) {
      const std::size_t ch = g * gs + cc;
      const double gam = gamma.v[ch], bet = beta.v[ch];
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t off = ch * spatial + i;
        const double xh = (x.v[off] - mean) * inv;
        cache.x_hat.v[off] = xh;
        y.v[off] = gam * xh + bet;
      }
    }
  }
  return y;
}

inline void groupnorm_bwd(const Tensor& dy, const Tensor& gamma,
                          const GroupNormCache& cache, Tensor& dx,
                          Tensor& dgamma, Tensor& dbeta) {
  const Tensor& xh = cache.x_hat;
  const std::size_t c = xh.dim(0), spatial = xh.dim(1) * xh.dim(2);
  const std::size_t groups = cache.groups, gs = c / groups;
  dx = Tensor(xh.shape);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t m = gs * spatial;
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (std::size_t cc = 0; cc < gs; ++cc) {
      const std::size_t ch = g * gs + cc;
      const double gam = gamma.v[ch];
      double dg = 0.0, dbt = 0.0;
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t off = ch * spatial + i;
        const double dxh = dy.v[off] * gam;
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh.v[off];
        dg += dy.v[off] * xh.v[off];
        dbt += dy.v[off];
      }
      dgamma.v[ch] += dg;
      dbeta.v[ch] += dbt;
    }
    const double inv = cache.inv_std[g];
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t cc = 0; cc < gs; ++cc) {
      const std::size_t ch = g * gs + cc;
      const double gam = gamma.v[ch];
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t off = ch * spatial + i;
        const double dxh = dy.v[off] * gam;
        dx.v[off] =
            inv * (dxh - inv_m * sum_dxh - xh.v[off] * inv_m * sum_dxh_xh);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// SiLU x * sigmoid(x)
// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Tensor silu_fwd(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i)
    y.v[i] = x.v[i] * sigmoid(x.v[i]);
  return y;
}

/// dx = dy * silu'(x), where x is the forward input.
inline Tensor silu_bwd(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = sigmoid(x.v[i]);
    dx.v[i] = dy.v[i] * s * (1.0 + x.v[i] * (1.0 - s));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear layer on row matrices: x (N, In), w (Out, In), b (Out) -> (N, Out)
// ---------------------------------------------------------------------------

inline Tensor linear_fwd(const Tensor& x, const Tensor& w, const Tensor* b) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  require(w.dim(1) == in, "linear weight shape mismatch");
  Tensor y({n, out});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = &x.v[r * in];
    double* yr = &y.v[r * out];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = &w.v[o * in];
      double acc = b ? b->v[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
  return y;
}

inline void linear_bwd(const Tensor& x, const Tensor& w, const Tensor& dy,
                       Tensor& dx, Tensor& dw, Tensor* db) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
  dx = Tensor({n, in});
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = &x.v[r * in];
    const double* dyr = &dy.v[r * out];
    double* dxr = &dx.v[r * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dyr[o];
      if (db) db->v[o] += g;
      const double* wr = &w.v[o * in];
      double* dwr = &dw.v[o * in];
      for (std::size_t i = 0; i < in; ++i) {
        dxr[i] += g * wr[i];
        dwr[i] += g * xr[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Frame-axis resampling: the row axis (H = 8) is never pooled.
// ---------------------------------------------------------------------------

inline Tensor downsample2_fwd(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(w % 2 == 0, "frame count must be even to downsample");
  Tensor y({c, h, w / 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r) {
      const double* xr = &x.v[(ch * h + r) * w];
      double* yr = &y.v[(ch * h + r) * (w / 2)];
      for (std::size_t i = 0; i < w / 2; ++i)
        yr[i] = 0.5 * (xr[2 * i] + xr[2 * i + 1]);
    }
  return y;
}

inline Tensor downsample2_bwd(const Tensor& dy) {
  const std::size_t c = dy.dim(0), h = dy.dim(1), w2 = dy.dim(2);
  Tensor dx({c, h, w2 * 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r) {
      const double* dyr = &dy.v[(ch * h + r) * w2];
      double* dxr = &dx.v[(ch * h + r) * (w2 * 2)];
      for (std::size_t i = 0; i < w2; ++i) {
        dxr[2 * i] = 0.5 * dyr[i];
        dxr[2 * i + 1] = 0.5 * dyr[i];
      }
    }
  return dx;
}

inline Tensor upsample2_fwd(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y({c, h, w * 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r) {
      const double* xr = &x.v[(ch * h + r) * w];
      double* yr = &y.v[(ch * h + r) * (w * 2)];
      for (std::size_t i = 0; i < w; ++i) {
        yr[2 * i] = xr[i];
        yr[2 * i + 1] = xr[i];
      }
    }
  return y;
}

inline Tensor upsample2_bwd(const Tensor& dy) {
  const std::size_t c = dy.dim(0), h = dy.dim(1), w2 = dy.dim(2);
  require(w2 % 2 == 0, "upsample2_bwd expects an even frame count");
  Tensor dx({c, h, w2 / 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r) {
      const double* dyr = &dy.v[(ch * h + r) * w2];
      double* dxr = &dx.v[(ch * h + r) * (w2 / 2)];
      for (std::size_t i = 0; i < w2 / 2; ++i)
        dxr[i] = dyr[2 * i] + dyr[2 * i + 1];
    }
  return dx;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
          "concat spatial shape mismatch");
  Tensor y({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<long>(a.size()));
  return y;
}

inline void split_channels(const Tensor& dy, std::size_t c_a, Tensor& da,
                           Tensor& db) {
  const std::size_t c = dy.dim(0), h = dy.dim(1), w = dy.dim(2);
  require(c_a < c, "split point out of range");
  da = Tensor({c_a, h, w});
  db = Tensor({c - c_a, h, w});
  std::copy(dy.v.begin(), dy.v.begin() + static_cast<long>(c_a * h * w),
            da.v.begin());
  std::copy(dy.v.begin() + static_cast<long>(c_a * h * w), dy.v.end(),
            db.v.begin());
}

// ---------------------------------------------------------------------------
// Sinusoidal step embedding (no parameters).
// ---------------------------------------------------------------------------

inline Tensor sinusoid_embedding(std::size_t t, std::size_t dim) {
  require(dim >= 2 && dim % 2 == 0, "time embedding dim must be even");
  const std::size_t half = dim / 2;
  Tensor e({1, dim});
  for (std::size_t i = 0; i < half; ++i) {
    const double expo =
        half == 1 ? 0.0
                  : static_cast<double>(i) / static_cast<double>(half - 1);
    const double freq = std::exp(-std::log(10000.0) * expo);
    e.v[i] = std::sin(static_cast<double>(t) * freq);
    e.v[half + i] = std::cos(static_cast<double>(t) * freq);
  }
  return e;
}

// ---------------------------------------------------------------------------
// Row softmax with cached probabilities (for cross-attention).
// ---------------------------------------------------------------------------

inline void softmax_rows(Tensor& scores) {
  const std::size_t n = scores.dim(0), m = scores.dim(1);
  for (std::size_t r = 0; r < n; ++r) {
    double* row = &scores.v[r * m];
    double mx = row[0];
    for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      row[i] = std::exp(row[i] - mx);
      sum += row[i];
    }
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < m; ++i) row[i] *= inv;
  }
}

/// Backward through row softmax: dscores = p .* (dp - sum(dp .* p)).
inline Tensor softmax_rows_bwd(const Tensor& probs, const Tensor& dprobs) {
  const std::size_t n = probs.dim(0), m = probs.dim(1);
  Tensor ds({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    const double* p = &probs.v[r * m];
    const double* dp = &dprobs.v[r * m];
    double dot = 0.0;
    for (std::size_t i = 0; i < m; ++i) dot += dp[i] * p[i];
    double* out = &ds.v[r * m];
    for (std::size_t i = 0; i < m; ++i) out[i] = p[i] * (dp[i] - dot);
  }
  return ds;
}

}  // namespace machgen::nn
