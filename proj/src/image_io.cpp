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

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

namespace fedmark {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Raster read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image '" + path.string() + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  Raster r;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unreadable PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png), png_set_strip_alpha(png);
  png_read_update_info(png, info);
  r.width = static_cast<int>(png_get_image_width(png, info));
  r.height = static_cast<int>(png_get_image_height(png, info));
  r.channels = png_get_channels(png, info);
  r.pixels.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
  rows.resize(r.height);
  for (int y = 0; y < r.height; ++y)
    rows[y] = r.pixels.data() + static_cast<std::size_t>(y) * r.width * r.channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return r;
}

Raster read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image '" + path.string() + "'");
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") throw std::runtime_error("unsupported PNM type " + magic);
  auto next_int = [&]() {
    int v = 0;
    while (true) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
        continue;
      }
      if (!(in >> v)) throw std::runtime_error("corrupt PNM header in '" + path.string() + "'");
      return v;
    }
  };
  Raster r;
  r.width = next_int();
  r.height = next_int();
  const int maxval = next_int();
  if (maxval <= 0 || maxval > 255) throw std::runtime_error("only 8-bit PNM is supported");
  in.get();
  r.channels = magic == "P5" ? 1 : 3;
  r.pixels.resize(static_cast<std::size_t>(r.width) * r.height * r.channels);
  in.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(r.pixels.size()))
    throw std::runtime_error("truncated PNM '" + path.string() + "'");
  if (maxval != 255)
    for (auto& p : r.pixels) p = static_cast<std::uint8_t>(p * 255 / maxval);
  return r;
}

}  // namespace

Raster read_image(const std::filesystem::path& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw std::runtime_error("cannot open image '" + path.string() + "'");
  char head[8] = {};
  probe.read(head, 8);
  probe.close();
  Raster r;
  if (static_cast<unsigned char>(head[0]) == 0x89 && head[1] == 'P' && head[2] == 'N' &&
      head[3] == 'G') {
    r = read_png(path);
  } else if (head[0] == 'P' && (head[1] == '5' || head[1] == '6')) {
    r = read_pnm(path);
  } else {
    throw std::runtime_error("unsupported image format '" + path.string() + "'");
  }
  if (r.width <= 0 || r.height <= 0)
    throw std::runtime_error("image '" + path.string() + "' has zero area");
  return r;
}

namespace {

void check_raster(const Raster& r, const std::filesystem::path& path) {
  if ((r.channels != 1 && r.channels != 3) || r.width <= 0 || r.height <= 0 ||
      r.pixels.size() != static_cast<std::size_t>(r.width) * r.height * r.channels)
    throw std::runtime_error("malformed raster for '" + path.string() + "'");
}

}  // namespace

void write_png(const std::filesystem::path& path, const Raster& raster) {
  check_raster(raster, path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot write image '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  const int color = raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, raster.width, raster.height, 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < raster.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raster.pixels.data() +
                                             static_cast<std::size_t>(y) * raster.width *
                                                 raster.channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_pnm(const std::filesystem::path& path, const Raster& raster) {
  check_raster(raster, path);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write image '" + path.string() + "'");
  out << (raster.channels == 1 ? "P5" : "P6") << "\n"
      << raster.width << " " << raster.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(raster.pixels.data()),
            static_cast<std::streamsize>(raster.pixels.size()));
}

}  // namespace fedmark
