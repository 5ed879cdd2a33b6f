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

#include <algorithm>
#include <limits>

#include "fedmark/kernels.hpp"

namespace fedmark::reference {

namespace {
inline std::size_t idx4(int a, int b, int c, int d, int nb, int nc, int nd) {
  return ((static_cast<std::size_t>(a) * nb + b) * nc + c) * nd + d;
}
}  // namespace

void conv2d_forward(const ConvGeom& g, const Real* in, const Real* weight, const Real* bias,
                    Real* out) {
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oh = 0; oh < g.out_h; ++oh)
        for (int ow = 0; ow < g.out_w; ++ow) {
          Real acc = bias ? bias[oc] : 0.0;
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int kh = 0; kh < g.kernel; ++kh)
              for (int kw = 0; kw < g.kernel; ++kw) {
                const int ih = oh * g.stride - g.pad + kh;
                const int iw = ow * g.stride - g.pad + kw;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                acc += weight[idx4(oc, ic, kh, kw, g.in_c, g.kernel, g.kernel)] *
                       in[idx4(n, ic, ih, iw, g.in_c, g.in_h, g.in_w)];
              }
          out[idx4(n, oc, oh, ow, g.out_c, g.out_h, g.out_w)] = acc;
        }
}

void conv2d_backward_input(const ConvGeom& g, const Real* gout, const Real* weight, Real* gin) {
  std::fill(gin, gin + static_cast<std::size_t>(g.batch) * g.in_c * g.in_h * g.in_w, 0.0);
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oh = 0; oh < g.out_h; ++oh)
        for (int ow = 0; ow < g.out_w; ++ow)
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int kh = 0; kh < g.kernel; ++kh)
              for (int kw = 0; kw < g.kernel; ++kw) {
                const int ih = oh * g.stride - g.pad + kh;
                const int iw = ow * g.stride - g.pad + kw;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                gin[idx4(n, ic, ih, iw, g.in_c, g.in_h, g.in_w)] +=
                    weight[idx4(oc, ic, kh, kw, g.in_c, g.kernel, g.kernel)] *
                    gout[idx4(n, oc, oh, ow, g.out_c, g.out_h, g.out_w)];
              }
}

void conv2d_backward_weight(const ConvGeom& g, const Real* in, const Real* gout, Real* gw,
                            Real* gbias) {
  for (int n = 0; n < g.batch; ++n)
    for (int oc = 0; oc < g.out_c; ++oc)
      for (int oh = 0; oh < g.out_h; ++oh)
        for (int ow = 0; ow < g.out_w; ++ow) {
          const Real go = gout[idx4(n, oc, oh, ow, g.out_c, g.out_h, g.out_w)];
          if (gbias) gbias[oc] += go;
          for (int ic = 0; ic < g.in_c; ++ic)
            for (int kh = 0; kh < g.kernel; ++kh)
              for (int kw = 0; kw < g.kernel; ++kw) {
                const int ih = oh * g.stride - g.pad + kh;
                const int iw = ow * g.stride - g.pad + kw;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                gw[idx4(oc, ic, kh, kw, g.in_c, g.kernel, g.kernel)] +=
                    go * in[idx4(n, ic, ih, iw, g.in_c, g.in_h, g.in_w)];
              }
        }
}

void matmul_xwt(int n, int in_f, int out_f, const Real* x, const Real* w, Real* y) {
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < out_f; ++o) {
      Real acc = 0.0;
      for (int i = 0; i < in_f; ++i) acc += x[r * in_f + i] * w[o * in_f + i];
      y[r * out_f + o] = acc;
    }
}

void matmul_xw(int n, int out_f, int in_f, const Real* x, const Real* w, Real* y) {
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < in_f; ++i) {
      Real acc = 0.0;
      for (int o = 0; o < out_f; ++o) acc += x[r * out_f + o] * w[o * in_f + i];
      y[r * in_f + i] = acc;
    }
}

void outer_accumulate(int n, int rows, int cols, const Real* a, const Real* b, Real* g) {
  for (int s = 0; s < n; ++s)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) g[r * cols + c] += a[s * rows + r] * b[s * cols + c];
}

void maxpool_forward(const PoolGeom& g, const Real* in, Real* out, int* argmax) {
  for (int p = 0; p < g.batch * g.channels; ++p)
    for (int oh = 0; oh < g.out_h; ++oh)
      for (int ow = 0; ow < g.out_w; ++ow) {
        Real best = -std::numeric_limits<Real>::infinity();
        int best_i = -1;
        for (int kh = 0; kh < g.kernel; ++kh)
          for (int kw = 0; kw < g.kernel; ++kw) {
            const int ih = oh * g.stride + kh, iw = ow * g.stride + kw;
            if (ih >= g.in_h || iw >= g.in_w) continue;
            const Real v = in[static_cast<std::size_t>(p) * g.in_h * g.in_w + ih * g.in_w + iw];
            if (best_i < 0 || v > best) {
              best = v;
              best_i = ih * g.in_w + iw;
            }
          }
        out[static_cast<std::size_t>(p) * g.out_h * g.out_w + oh * g.out_w + ow] = best;
        argmax[static_cast<std::size_t>(p) * g.out_h * g.out_w + oh * g.out_w + ow] = best_i;
      }
}

void spread_forward(const PoolGeom& g, const Real* in, Real* out) {
  // Written as an explicit transposed convolution with a constant kernel.
  const Real w = 1.0 / (g.kernel * g.kernel);
  for (int p = 0; p < g.batch * g.channels; ++p)
    for (int ih = 0; ih < g.in_h; ++ih)
      for (int iw = 0; iw < g.in_w; ++iw) {
        Real acc = 0.0;
        for (int oh = 0; oh < g.out_h; ++oh)
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int kh = ih - oh * g.stride, kw = iw - ow * g.stride;
            if (kh < 0 || kh >= g.kernel || kw < 0 || kw >= g.kernel) continue;
            acc += w * in[static_cast<std::size_t>(p) * g.out_h * g.out_w + oh * g.out_w + ow];
          }
        out[static_cast<std::size_t>(p) * g.in_h * g.in_w + ih * g.in_w + iw] = acc;
      }
}

}  // namespace fedmark::reference
