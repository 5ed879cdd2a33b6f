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

#ifndef FEDMARK_RNG_HPP_
#define FEDMARK_RNG_HPP_

#include <cstdint>
#include <random>
#include <string_view>

namespace fedmark {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream for one (seed, purpose, round, client) tuple. Every
// random draw in a run goes through here so runs replay exactly.
inline Rng stream(std::uint64_t seed, std::string_view tag, std::uint64_t round = 0,
                  std::uint64_t client = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t k = splitmix64(seed ^ splitmix64(h));
  k = splitmix64(k ^ splitmix64(round + 0x1234567ULL));
  k = splitmix64(k ^ splitmix64(client + 0x89abcdefULL));
  return Rng(k);
}

}  // namespace fedmark

#endif  // FEDMARK_RNG_HPP_
