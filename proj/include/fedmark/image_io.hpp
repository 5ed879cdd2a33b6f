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

#ifndef FEDMARK_IMAGE_IO_HPP_
#define FEDMARK_IMAGE_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fedmark {

// 8-bit interleaved raster (HWC).
struct Raster {
  int height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Reads PNG (gray, gray+alpha, RGB, RGBA, palette) or binary PGM/PPM,
// detected by content. Alpha is dropped.
Raster read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Raster& raster);
void write_pnm(const std::filesystem::path& path, const Raster& raster);

}  // namespace fedmark

#endif  // FEDMARK_IMAGE_IO_HPP_
