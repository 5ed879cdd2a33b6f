// Copyright 2026 The fedmark Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedmark/kernels.hpp"

#include <algorithm>
#include <limits>

namespace fedmark::kernels {
namespace {

// Output column range [lo, hi) whose input column ow*s - p + k lands in [0, n).
inline void valid_range(int out_n, int in_n, int s, int p, int k, int& lo, int& hi) {
  // ow*s >= p - k
  const int a = p - k;
  lo = a <= 0 ? 0 : (a + s - 1) / s;
  // ow*s <= in_n - 1 + p - k
  const int b = in_n - 1 + p - k;
  hi = b < 0 ? 0 : b / s + 1;
  lo = std::min(lo, out_n);
  hi = std::min(hi, out_n);
  if (hi < lo) hi = lo;
}

}  // namespace

void conv2d_forward(const ConvGeom& g, const Real* in, const Real* weight, const Real* bias,
                    Real* out) {
  const int in_plane = g.in_h * g.in_w;
  const int out_plane = g.out_h * g.out_w;
  const int ksq = g.kernel * g.kernel;
  const int jobs = g.batch * g.out_c;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int n = job / g.out_c;
    const int oc = job % g.out_c;
    Real* o = out + static_cast<std::size_t>(job) * out_plane;
    const Real b0 = bias ? bias[oc] : 0.0;
    std::fill(o, o + out_plane, b0);
    for (int ic = 0; ic < g.in_c; ++ic) {
      const Real* x = in + (static_cast<std::size_t>(n) * g.in_c + ic) * in_plane;
      const Real* w = weight + (static_cast<std::size_t>(oc) * g.in_c + ic) * ksq;
      for (int kh = 0; kh < g.kernel; ++kh) {
        int oh_lo, oh_hi;
        valid_range(g.out_h, g.in_h, g.stride, g.pad, kh, oh_lo, oh_hi);
        for (int kw = 0; kw < g.kernel; ++kw) {
          const Real wv = w[kh * g.kernel + kw];
          int ow_lo, ow_hi;
          valid_range(g.out_w, g.in_w, g.stride, g.pad, kw, ow_lo, ow_hi);
          for (int oh = oh_lo; oh < oh_hi; ++oh) {
            const Real* xr = x + (oh * g.stride - g.pad + kh) * g.in_w - g.pad + kw;
            Real* orow = o + oh * g.out_w;
            if (g.stride == 1) {
              for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xr[ow];
            } else {
              for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * xr[ow * g.stride];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeom& g, const Real* gout, const Real* weight, Real* gin) {
  const int in_plane = g.in_h * g.in_w;
  const int out_plane = g.out_h * g.out_w;
  const int ksq = g.kernel * g.kernel;
  const int jobs = g.batch * g.in_c;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const int n = job / g.in_c;
    const int ic = job % g.in_c;
    Real* gi = gin + static_cast<std::size_t>(job) * in_plane;
    std::fill(gi, gi + in_plane, 0.0);
    for (int oc = 0; oc < g.out_c; ++oc) {
      const Real* go = gout + (static_cast<std::size_t>(n) * g.out_c + oc) * out_plane;
      const Real* w = weight + (static_cast<std::size_t>(oc) * g.in_c + ic) * ksq;
      for (int kh = 0; kh < g.kernel; ++kh) {
        int oh_lo, oh_hi;
        valid_range(g.out_h, g.in_h, g.stride, g.pad, kh, oh_lo, oh_hi);
        for (int kw = 0; kw < g.kernel; ++kw) {
          const Real wv = w[kh * g.kernel + kw];
          int ow_lo, ow_hi;
          valid_range(g.out_w, g.in_w, g.stride, g.pad, kw, ow_lo, ow_hi);
          for (int oh = oh_lo; oh < oh_hi; ++oh) {
            Real* gr = gi + (oh * g.stride - g.pad + kh) * g.in_w - g.pad + kw;
            const Real* gorow = go + oh * g.out_w;
            if (g.stride == 1) {
              for (int ow = ow_lo; ow < ow_hi; ++ow) gr[ow] += wv * gorow[ow];
            } else {
              for (int ow = ow_lo; ow < ow_hi; ++ow) gr[ow * g.stride] += wv * gorow[ow];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeom& g, const Real* in, const Real* gout, Real* gw,
                            Real* gbias) {
  const int in_plane = g.in_h * g.in_w;
  const int out_plane = g.out_h * g.out_w;
  const int ksq = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < g.out_c; ++oc) {
    for (int n = 0; n < g.batch; ++n) {
      const Real* go = gout + (static_cast<std::size_t>(n) * g.out_c + oc) * out_plane;
      if (gbias) {
        Real s = 0.0;
        for (int i = 0; i < out_plane; ++i) s += go[i];
        gbias[oc] += s;
      }
      for (int ic = 0; ic < g.in_c; ++ic) {
        const Real* x = in + (static_cast<std::size_t>(n) * g.in_c + ic) * in_plane;
        Real* w = gw + (static_cast<std::size_t>(oc) * g.in_c + ic) * ksq;
        for (int kh = 0; kh < g.kernel; ++kh) {
          int oh_lo, oh_hi;
          valid_range(g.out_h, g.in_h, g.stride, g.pad, kh, oh_lo, oh_hi);
          for (int kw = 0; kw < g.kernel; ++kw) {
            int ow_lo, ow_hi;
            valid_range(g.out_w, g.in_w, g.stride, g.pad, kw, ow_lo, ow_hi);
            Real acc = 0.0;
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const Real* xr = x + (oh * g.stride - g.pad + kh) * g.in_w - g.pad + kw;
              const Real* gorow = go + oh * g.out_w;
              if (g.stride == 1) {
                for (int ow = ow_lo; ow < ow_hi; ++ow) acc += gorow[ow] * xr[ow];
              } else {
                for (int ow = ow_lo; ow < ow_hi; ++ow) acc += gorow[ow] * xr[ow * g.stride];
              }
            }
            w[kh * g.kernel + kw] += acc;
          }
        }
      }
    }
  }
}

void matmul_xwt(int n, int in_f, int out_f, const Real* x, const Real* w, Real* y) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    const Real* xr = x + static_cast<std::size_t>(r) * in_f;
    Real* yr = y + static_cast<std::size_t>(r) * out_f;
    for (int o = 0; o < out_f; ++o) {
      const Real* wr = w + static_cast<std::size_t>(o) * in_f;
      Real acc = 0.0;
      for (int i = 0; i < in_f; ++i) acc += xr[i] * wr[i];
      yr[o] = acc;
    }
  }
}

void matmul_xw(int n, int out_f, int in_f, const Real* x, const Real* w, Real* y) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < n; ++r) {
    const Real* xr = x + static_cast<std::size_t>(r) * out_f;
    Real* yr = y + static_cast<std::size_t>(r) * in_f;
    std::fill(yr, yr + in_f, 0.0);
    for (int o = 0; o < out_f; ++o) {
      const Real xv = xr[o];
      if (xv == 0.0) continue;
      const Real* wr = w + static_cast<std::size_t>(o) * in_f;
      for (int i = 0; i < in_f; ++i) yr[i] += xv * wr[i];
    }
  }
}

void outer_accumulate(int n, int rows, int cols, const Real* a, const Real* b, Real* g) {
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    Real* gr = g + static_cast<std::size_t>(r) * cols;
    for (int s = 0; s < n; ++s) {
      const Real av = a[static_cast<std::size_t>(s) * rows + r];
      if (av == 0.0) continue;
      const Real* br = b + static_cast<std::size_t>(s) * cols;
      for (int c = 0; c < cols; ++c) gr[c] += av * br[c];
    }
  }
}

void maxpool_forward(const PoolGeom& g, const Real* in, Real* out, int* argmax) {
  const int in_plane = g.in_h * g.in_w;
  const int out_plane = g.out_h * g.out_w;
  const int jobs = g.batch * g.channels;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const Real* x = in + static_cast<std::size_t>(job) * in_plane;
    Real* o = out + static_cast<std::size_t>(job) * out_plane;
    int* am = argmax + static_cast<std::size_t>(job) * out_plane;
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        Real best = -std::numeric_limits<Real>::infinity();
        int best_i = -1;
        for (int kh = 0; kh < g.kernel; ++kh) {
          const int ih = oh * g.stride + kh;
          if (ih >= g.in_h) break;
          for (int kw = 0; kw < g.kernel; ++kw) {
            const int iw = ow * g.stride + kw;
            if (iw >= g.in_w) break;
            const int idx = ih * g.in_w + iw;
            if (x[idx] > best || best_i < 0) {
              best = x[idx];
              best_i = idx;
            }
          }
        }
        o[oh * g.out_w + ow] = best;
        am[oh * g.out_w + ow] = best_i;
      }
    }
  }
}

void maxpool_backward(const PoolGeom& g, const Real* gout, const int* argmax, Real* gin) {
  const int in_plane = g.in_h * g.in_w;
  const int out_plane = g.out_h * g.out_w;
  const int jobs = g.batch * g.channels;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    Real* gi = gin + static_cast<std::size_t>(job) * in_plane;
    const Real* go = gout + static_cast<std::size_t>(job) * out_plane;
    const int* am = argmax + static_cast<std::size_t>(job) * out_plane;
    std::fill(gi, gi + in_plane, 0.0);
    for (int i = 0; i < out_plane; ++i) gi[am[i]] += go[i];
  }
}

void spread_forward(const PoolGeom& g, const Real* in, Real* out) {
  const int big = g.in_h * g.in_w;
  const int small = g.out_h * g.out_w;
  const Real scale = 1.0 / (g.kernel * g.kernel);
  const int jobs = g.batch * g.channels;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const Real* x = in + static_cast<std::size_t>(job) * small;
    Real* o = out + static_cast<std::size_t>(job) * big;
    std::fill(o, o + big, 0.0);
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        const Real v = x[oh * g.out_w + ow] * scale;
        for (int kh = 0; kh < g.kernel; ++kh) {
          const int ih = oh * g.stride + kh;
          if (ih >= g.in_h) break;
          for (int kw = 0; kw < g.kernel; ++kw) {
            const int iw = ow * g.stride + kw;
            if (iw >= g.in_w) break;
            o[ih * g.in_w + iw] += v;
          }
        }
      }
    }
  }
}

void spread_backward(const PoolGeom& g, const Real* gout, Real* gin) {
  const int big = g.in_h * g.in_w;
  const int small = g.out_h * g.out_w;
  const Real scale = 1.0 / (g.kernel * g.kernel);
  const int jobs = g.batch * g.channels;
#pragma omp parallel for schedule(static)
  for (int job = 0; job < jobs; ++job) {
    const Real* go = gout + static_cast<std::size_t>(job) * big;
    Real* gi = gin + static_cast<std::size_t>(job) * small;
    for (int oh = 0; oh < g.out_h; ++oh) {
      for (int ow = 0; ow < g.out_w; ++ow) {
        Real acc = 0.0;
        for (int kh = 0; kh < g.kernel; ++kh) {
          const int ih = oh * g.stride + kh;
          if (ih >= g.in_h) break;
          for (int kw = 0; kw < g.kernel; ++kw) {
            const int iw = ow * g.stride + kw;
            if (iw >= g.in_w) break;
            acc += go[ih * g.in_w + iw];
          }
        }
        gi[oh * g.out_w + ow] = acc * scale;
      }
    }
  }
}

}  // namespace fedmark::kernels
