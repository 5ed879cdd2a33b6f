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

#ifndef FEDMARK_CLI_HPP_
#define FEDMARK_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedmark/federation.hpp"
#include "json.hpp"

namespace fedmark {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitVerifyFail = 3;

struct CapacityResult {
  std::size_t bits = 0;
  double ber = 0.0;
  double codec_ber = 0.0;  // encode -> decode without a model
  double ssim = 0.0;
  std::vector<std::uint8_t> sent, received;
  nlohmann::json to_json() const;
};
// Single-client dot-code run: encode random bits, embed, extract, decode.
CapacityResult capacity_experiment(ExperimentConfig cfg, std::size_t bits,
                                   const RunOptions& opts = {});

// Desk-scale defaults for a named dataset ("synthetic-gray", "synthetic-rgb").
ExperimentConfig dataset_preset(const std::string& name);

// Summary of a run directory: final metrics per client, attack records and an
// image sheet written to <run>/report/.
nlohmann::json make_report(const std::filesystem::path& run_dir);

// Directory for a named run: $FEDMARK_RUN_ROOT/<name>, default runs/<name>.
std::filesystem::path run_root();

int cli_main(int argc, char** argv);

}  // namespace fedmark

#endif  // FEDMARK_CLI_HPP_
