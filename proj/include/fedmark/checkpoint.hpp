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

#ifndef FEDMARK_CHECKPOINT_HPP_
#define FEDMARK_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedmark/model.hpp"
#include "json.hpp"

namespace fedmark {

// Unreadable, truncated or wrongly-versioned binary file.
class FormatError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Parameter values, both BN statistic sets and the architecture, as written
// to disk. Arrays are little-endian float32 with explicit shape headers.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  ArchConfig arch;
  TensorMap params;
  std::map<std::string, BnStats> bn;
  nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json arch_to_json(const ArchConfig& arch);
ArchConfig arch_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

// Little-endian primitives shared by the checkpoint and key formats.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void u64(std::uint64_t v);
  void f32(float v);
  void str(const std::string& s);
  void f32_array(const std::vector<Real>& values);
  void raw(const std::string& s);
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  std::uint32_t u32();
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::uint64_t u64();
  float f32();
  std::string str();
  std::vector<Real> f32_array();
  std::string raw(std::size_t n);
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace fedmark

#endif  // FEDMARK_CHECKPOINT_HPP_
