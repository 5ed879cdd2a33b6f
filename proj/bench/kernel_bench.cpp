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

// Parallel kernels against the serial reference on TinyVGG-sized shapes.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fedmark/kernels.hpp"

namespace {

using fedmark::ConvGeom;
using fedmark::PoolGeom;
using fedmark::Real;

std::vector<Real> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  std::vector<Real> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Second conv block of TinyVGG on 28x28 input: 8 -> 16 channels at 14x14.
ConvGeom conv_geom(int batch) {
  ConvGeom g;
  g.batch = batch;
  g.in_c = 8;
  g.out_c = 16;
  g.in_h = g.in_w = g.out_h = g.out_w = 14;
  g.kernel = 3;
  g.pad = 1;
  return g;
}

std::size_t in_n(const ConvGeom& g) { return static_cast<std::size_t>(g.batch) * g.in_c * g.in_h * g.in_w; }
std::size_t out_n(const ConvGeom& g) { return static_cast<std::size_t>(g.batch) * g.out_c * g.out_h * g.out_w; }
std::size_t w_n(const ConvGeom& g) { return static_cast<std::size_t>(g.out_c) * g.in_c * g.kernel * g.kernel; }

template <bool Parallel>
void BM_ConvForward(benchmark::State& st) {
  const ConvGeom g = conv_geom(static_cast<int>(st.range(0)));
  const auto x = noise(in_n(g), 1), w = noise(w_n(g), 2), b = noise(g.out_c, 3);
  std::vector<Real> y(out_n(g));
  for (auto _ : st) {
    if constexpr (Parallel)
      fedmark::kernels::conv2d_forward(g, x.data(), w.data(), b.data(), y.data());
    else
      fedmark::reference::conv2d_forward(g, x.data(), w.data(), b.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * g.batch);
}

template <bool Parallel>
void BM_ConvBackwardInput(benchmark::State& st) {
  const ConvGeom g = conv_geom(static_cast<int>(st.range(0)));
  const auto gy = noise(out_n(g), 1), w = noise(w_n(g), 2);
  std::vector<Real> gx(in_n(g));
  for (auto _ : st) {
    if constexpr (Parallel)
      fedmark::kernels::conv2d_backward_input(g, gy.data(), w.data(), gx.data());
    else
      fedmark::reference::conv2d_backward_input(g, gy.data(), w.data(), gx.data());
    benchmark::DoNotOptimize(gx.data());
  }
  st.SetItemsProcessed(st.iterations() * g.batch);
}

template <bool Parallel>
void BM_ConvBackwardWeight(benchmark::State& st) {
  const ConvGeom g = conv_geom(static_cast<int>(st.range(0)));
  const auto x = noise(in_n(g), 1), gy = noise(out_n(g), 2);
  std::vector<Real> gw(w_n(g)), gb(g.out_c);
  for (auto _ : st) {
    if constexpr (Parallel)
      fedmark::kernels::conv2d_backward_weight(g, x.data(), gy.data(), gw.data(), gb.data());
    else
      fedmark::reference::conv2d_backward_weight(g, x.data(), gy.data(), gw.data(), gb.data());
    benchmark::DoNotOptimize(gw.data());
  }
  st.SetItemsProcessed(st.iterations() * g.batch);
}

// fc1 of TinyVGG: 784 -> 64.
template <bool Parallel>
void BM_Linear(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0)), in_f = 784, out_f = 64;
  const auto x = noise(static_cast<std::size_t>(n) * in_f, 1), w = noise(in_f * out_f, 2);
  std::vector<Real> y(static_cast<std::size_t>(n) * out_f);
  for (auto _ : st) {
    if constexpr (Parallel)
      fedmark::kernels::matmul_xwt(n, in_f, out_f, x.data(), w.data(), y.data());
    else
      fedmark::reference::matmul_xwt(n, in_f, out_f, x.data(), w.data(), y.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * n);
}

template <bool Parallel>
void BM_OuterAccumulate(benchmark::State& st) {
  const int n = static_cast<int>(st.range(0)), rows = 64, cols = 784;
  const auto a = noise(static_cast<std::size_t>(n) * rows, 1);
  const auto b = noise(static_cast<std::size_t>(n) * cols, 2);
  std::vector<Real> g(rows * cols);
  for (auto _ : st) {
    if constexpr (Parallel)
      fedmark::kernels::outer_accumulate(n, rows, cols, a.data(), b.data(), g.data());
    else
      fedmark::reference::outer_accumulate(n, rows, cols, a.data(), b.data(), g.data());
    benchmark::DoNotOptimize(g.data());
  }
  st.SetItemsProcessed(st.iterations() * n);
}

template <bool Parallel>
void BM_MaxPool(benchmark::State& st) {
  PoolGeom g;
  g.batch = static_cast<int>(st.range(0));
  g.channels = 8;
  g.in_h = g.in_w = 28;
  g.out_h = g.out_w = 14;
  const auto x = noise(static_cast<std::size_t>(g.batch) * 8 * 28 * 28, 1);
  std::vector<Real> y(static_cast<std::size_t>(g.batch) * 8 * 14 * 14);
  std::vector<int> arg(y.size());
  for (auto _ : st) {
    if constexpr (Parallel)
      fedmark::kernels::maxpool_forward(g, x.data(), y.data(), arg.data());
    else
      fedmark::reference::maxpool_forward(g, x.data(), y.data(), arg.data());
    benchmark::DoNotOptimize(y.data());
  }
  st.SetItemsProcessed(st.iterations() * g.batch);
}

#define FEDMARK_BENCH_PAIR(fn)                                                    \
  BENCHMARK_TEMPLATE(fn, true)->Name(#fn "/parallel")->Arg(8)->Arg(32)->Arg(128); \
  BENCHMARK_TEMPLATE(fn, false)->Name(#fn "/reference")->Arg(8)->Arg(32)->Arg(128)

FEDMARK_BENCH_PAIR(BM_ConvForward);
FEDMARK_BENCH_PAIR(BM_ConvBackwardInput);
FEDMARK_BENCH_PAIR(BM_ConvBackwardWeight);
FEDMARK_BENCH_PAIR(BM_Linear);
FEDMARK_BENCH_PAIR(BM_OuterAccumulate);
FEDMARK_BENCH_PAIR(BM_MaxPool);

}  // namespace

BENCHMARK_MAIN();
