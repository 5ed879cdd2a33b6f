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

#include "fedmark/image_io.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"

namespace fedmark {
namespace {

Raster pattern(int h, int w, int c) {
  Raster r{h, w, c, {}};
  r.pixels.resize(static_cast<std::size_t>(h) * w * c);
  for (std::size_t i = 0; i < r.pixels.size(); ++i)
    r.pixels[i] = static_cast<std::uint8_t>((i * 37 + 11) % 256);
  return r;
}

void expect_same(const Raster& a, const Raster& b) {
  EXPECT_EQ(a.height, b.height);
  EXPECT_EQ(a.width, b.width);
  EXPECT_EQ(a.channels, b.channels);
  EXPECT_EQ(a.pixels, b.pixels);
}

TEST(ImageIo, PngRoundTrip) {
  const auto dir = testing::temp_dir("png_rt");
  for (int c : {1, 3}) {
    const Raster r = pattern(5, 7, c);
    write_png(dir / "a.png", r);
    expect_same(read_image(dir / "a.png"), r);
  }
}

TEST(ImageIo, PnmRoundTrip) {
  const auto dir = testing::temp_dir("pnm_rt");
  const Raster g = pattern(4, 9, 1), rgb = pattern(6, 3, 3);
  write_pnm(dir / "g.pgm", g);
  write_pnm(dir / "c.ppm", rgb);
  expect_same(read_image(dir / "g.pgm"), g);
  expect_same(read_image(dir / "c.ppm"), rgb);
}

TEST(ImageIo, DetectsFormatByContent) {
  const auto dir = testing::temp_dir("png_ext");
  const Raster r = pattern(3, 3, 3);
  write_png(dir / "looks_like.ppm", r);
  expect_same(read_image(dir / "looks_like.ppm"), r);
}

TEST(ImageIo, PnmWithComment) {
  const auto dir = testing::temp_dir("pnm_comment");
  {
    std::ofstream f(dir / "x.pgm", std::ios::binary);
    f << "P5\n# made by hand\n2 1\n255\n";
    f.put(static_cast<char>(10));
    f.put(static_cast<char>(200));
  }
  const Raster r = read_image(dir / "x.pgm");
  EXPECT_EQ(r.width, 2);
  EXPECT_EQ(r.height, 1);
  EXPECT_EQ(r.pixels, (std::vector<std::uint8_t>{10, 200}));
}

TEST(ImageIo, Errors) {
  const auto dir = testing::temp_dir("img_err");
  EXPECT_THROW(read_image(dir / "missing.png"), std::runtime_error);
  {
    std::ofstream f(dir / "junk.png", std::ios::binary);
    f << "not an image";
  }
  EXPECT_THROW(read_image(dir / "junk.png"), std::runtime_error);
  {
    std::ofstream f(dir / "short.pgm", std::ios::binary);
    f << "P5\n4 4\n255\n";
    f.put(1);
  }
  EXPECT_THROW(read_image(dir / "short.pgm"), std::runtime_error);
  Raster bad = pattern(2, 2, 1);
  bad.pixels.pop_back();
  EXPECT_THROW(write_png(dir / "bad.png", bad), std::runtime_error);
  EXPECT_THROW(write_pnm(dir / "bad.pgm", bad), std::runtime_error);
  // Parent is a regular file.
  EXPECT_THROW(write_png(dir / "junk.png" / "x.png", pattern(2, 2, 1)), std::runtime_error);
}

}  // namespace
}  // namespace fedmark
