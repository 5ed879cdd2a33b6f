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

#ifndef FEDMARK_KERNELS_HPP_
#define FEDMARK_KERNELS_HPP_

#include "fedmark/tensor.hpp"

// Compute kernels for the layer library. Two implementations share every
// signature: `kernels::` is OpenMP-parallel over independent outputs (no
// cross-thread reductions, so results are bit-identical for any thread count)
// and `reference::` is a straight serial transcription kept for tests and the
// benchmark target.
namespace fedmark {

struct ConvGeom {
  int batch = 1;
  int in_c = 1, in_h = 1, in_w = 1;
  int out_c = 1, out_h = 1, out_w = 1;
  int kernel = 1, stride = 1, pad = 0;
};

// Geometry of a pooling window (depthwise, channels unchanged).
struct PoolGeom {
  int batch = 1, channels = 1;
  int in_h = 1, in_w = 1, out_h = 1, out_w = 1;
  int kernel = 2, stride = 2;
};

namespace kernels {

// out[n,oc] = bias[oc] + sum_ic W[oc,ic] * in[n,ic]  (cross-correlation)
void conv2d_forward(const ConvGeom& g, const Real* in, const Real* weight, const Real* bias,
                    Real* out);
// Adjoint of conv2d_forward w.r.t. its input; this is also the forward pass of
// a transposed convolution sharing `weight`. gin is overwritten.
void conv2d_backward_input(const ConvGeom& g, const Real* gout, const Real* weight, Real* gin);
// gw += d/dW; gbias (nullable) += sum of gout.
void conv2d_backward_weight(const ConvGeom& g, const Real* in, const Real* gout, Real* gw,
                            Real* gbias);

// y[n,o] = sum_i x[n,i] W[o,i]
void matmul_xwt(int n, int in_f, int out_f, const Real* x, const Real* w, Real* y);
// y[n,i] = sum_o x[n,o] W[o,i]
void matmul_xw(int n, int out_f, int in_f, const Real* x, const Real* w, Real* y);
// g[r,c] += sum_n a[n,r] b[n,c]
void outer_accumulate(int n, int rows, int cols, const Real* a, const Real* b, Real* g);

void maxpool_forward(const PoolGeom& g, const Real* in, Real* out, int* argmax);
void maxpool_backward(const PoolGeom& g, const Real* gout, const int* argmax, Real* gin);

// Fixed uniform transposed pooling: every pooled cell is spread over its
// window with weight 1/(k*k). `g` describes the forward pool; input is
// (out_h, out_w) and output is (in_h, in_w).
void spread_forward(const PoolGeom& g, const Real* in, Real* out);
void spread_backward(const PoolGeom& g, const Real* gout, Real* gin);

}  // namespace kernels

namespace reference {

void conv2d_forward(const ConvGeom& g, const Real* in, const Real* weight, const Real* bias,
                    Real* out);
void conv2d_backward_input(const ConvGeom& g, const Real* gout, const Real* weight, Real* gin);
void conv2d_backward_weight(const ConvGeom& g, const Real* in, const Real* gout, Real* gw,
                            Real* gbias);
void matmul_xwt(int n, int in_f, int out_f, const Real* x, const Real* w, Real* y);
void matmul_xw(int n, int out_f, int in_f, const Real* x, const Real* w, Real* y);
void outer_accumulate(int n, int rows, int cols, const Real* a, const Real* b, Real* g);
void maxpool_forward(const PoolGeom& g, const Real* in, Real* out, int* argmax);
void spread_forward(const PoolGeom& g, const Real* in, Real* out);

}  // namespace reference
}  // namespace fedmark

#endif  // FEDMARK_KERNELS_HPP_
