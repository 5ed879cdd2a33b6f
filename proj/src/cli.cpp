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

#include "fedmark/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "fedmark/attacks.hpp"
#include "fedmark/image_io.hpp"

namespace fedmark {

nlohmann::json CapacityResult::to_json() const {
  return {{"bits", bits},
          {"ber", ber},
          {"codec_ber", codec_ber},
          {"ssim", ssim},
          {"sent", bits_to_hex(sent)},
          {"received", bits_to_hex(received)}};
}

CapacityResult capacity_experiment(ExperimentConfig cfg, std::size_t bits,
                                   const RunOptions& opts) {
  cfg.agg.clients = 1;
  cfg.watermark.source = "dotcode";
  cfg.watermark.dotcode_bits = bits;
  const ImageDims dims = cfg.data.synthetic.dims;
  if (cfg.data.source == "synthetic") dotcode_layout(bits, dims);  // capacity check up front
  RunResult run = run_federation(cfg, opts);
  const ClientState& c = run.clients.at(0);
  const WatermarkKey& key = run.keys.at(0);
  CapacityResult r;
  r.bits = bits;
  r.sent = dotcode_decode(c.watermark.pixels, c.watermark.dims, bits);
  const auto codec = dotcode_decode(dotcode_encode(r.sent, c.watermark.dims).pixels,
                                    c.watermark.dims, bits);
  r.codec_ber = ber(r.sent, codec);
  const auto img = extract_watermark(run.global, key.vector, key.wm_bn);
  r.received = dotcode_decode(img, c.watermark.dims, bits);
  r.ber = ber(r.sent, r.received);
  r.ssim = run.final_ssim.at(0);
  return r;
}

ExperimentConfig dataset_preset(const std::string& name) {
  ExperimentConfig cfg;
  if (name == "synthetic-gray") {
    cfg.data.synthetic.dims = {28, 28, 1};
  } else if (name == "synthetic-rgb") {
    cfg.data.synthetic.dims = {32, 32, 3};
  } else {
    throw std::invalid_argument("unknown dataset '" + name + "' (synthetic-gray, synthetic-rgb)");
  }
  cfg.name = name;
  return cfg;
}

std::filesystem::path run_root() {
  const char* env = std::getenv("FEDMARK_RUN_ROOT");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Tiles equally sized rasters row by row with a 2-pixel white gutter.
Raster image_sheet(const std::vector<std::vector<Raster>>& rows) {
  if (rows.empty() || rows[0].empty()) return {};
  const int h = rows[0][0].height, w = rows[0][0].width, c = rows[0][0].channels;
  constexpr int kGap = 2;
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  Raster sheet;
  sheet.channels = c;
  sheet.width = static_cast<int>(cols) * (w + kGap) + kGap;
  sheet.height = static_cast<int>(rows.size()) * (h + kGap) + kGap;
  sheet.pixels.assign(static_cast<std::size_t>(sheet.width) * sheet.height * c, 255);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      const Raster& r = rows[i][j];
      if (r.height != h || r.width != w || r.channels != c) continue;
      const int oy = kGap + static_cast<int>(i) * (h + kGap);
      const int ox = kGap + static_cast<int>(j) * (w + kGap);
      for (int y = 0; y < h; ++y)
        std::copy_n(r.pixels.begin() + static_cast<long>(y) * w * c, w * c,
                    sheet.pixels.begin() + (static_cast<long>(oy + y) * sheet.width + ox) * c);
    }
  return sheet;
}

}  // namespace

nlohmann::json make_report(const std::filesystem::path& run_dir) {
  namespace fs = std::filesystem;
  std::ifstream in(run_dir / "metrics.csv");
  if (!in) throw std::runtime_error("no metrics.csv in '" + run_dir.string() + "'");
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  std::map<int, std::map<std::string, std::string>> last;  // client -> last row
  int last_round = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    last_round = std::max(last_round, std::stoi(row["round"]));
    last[std::stoi(row["client"])] = row;
  }
  nlohmann::json rep;
  rep["run"] = run_dir.string();
  rep["rounds"] = last_round;
  nlohmann::json clients = nlohmann::json::array();
  for (const auto& [id, row] : last) {
    nlohmann::json c;
    c["client"] = id;
    for (const auto& [k, v] : row)
      if (k != "client" && k != "round" && !v.empty()) c[k] = std::stod(v);
    clients.push_back(c);
  }
  rep["clients"] = clients;

  nlohmann::json attacks = nlohmann::json::array();
  if (fs::exists(run_dir / "attacks")) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(run_dir / "attacks"))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream af(f);
      nlohmann::json j;
      af >> j;
      attacks.push_back(j);
    }
  }
  rep["attacks"] = attacks;

  // One sheet row per client: reference, then every saved reconstruction.
  std::vector<std::vector<Raster>> rows;
  for (const auto& [id, row] : last) {
    std::vector<Raster> r;
    const fs::path ref = run_dir / "images" / ("client_" + std::to_string(id) + "_reference.png");
    if (fs::exists(ref)) r.push_back(read_image(ref));
    std::vector<fs::path> recs;
    const std::string suffix = "_client_" + std::to_string(id) + ".png";
    if (fs::exists(run_dir / "images"))
      for (const auto& e : fs::directory_iterator(run_dir / "images")) {
        const std::string n = e.path().filename().string();
        if (n.rfind("round_", 0) == 0 && n.size() > suffix.size() &&
            n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
          recs.push_back(e.path());
      }
    std::sort(recs.begin(), recs.end());
    for (const auto& p : recs) r.push_back(read_image(p));
    if (!r.empty()) rows.push_back(std::move(r));
  }
  fs::create_directories(run_dir / "report");
  if (!rows.empty()) {
    write_png(run_dir / "report" / "sheet.png", image_sheet(rows));
    rep["sheet"] = (run_dir / "report" / "sheet.png").string();
  }
  std::ofstream(run_dir / "report" / "summary.json") << rep.dump(2) << "\n";
  return rep;
}

namespace {

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

void print_error(const std::string& kind, const std::string& msg) {
  nlohmann::json j{{"error", msg}, {"kind", kind}};
  std::cerr << j.dump() << std::endl;
}

ExperimentConfig config_for_data(const std::string& config, const std::string& run_dir) {
  if (!config.empty()) return load_config(config);
  if (!run_dir.empty()) return load_config(std::filesystem::path(run_dir) / "config.json");
  return dataset_preset("synthetic-gray");
}

WatermarkImage image_or_logo(const std::string& path, const ImageDims& dims, std::uint64_t seed) {
  if (!path.empty()) {
    WatermarkImage w = load_watermark(path, dims);
    w.pixels = quantize8(w.pixels);
    return w;
  }
  return procedural_logo(seed, 1000, dims);
}

int cmd_train(const std::string& config_path, std::string run_dir) {
  if (!std::filesystem::exists(config_path))
    throw UsageError("config file '" + config_path + "' does not exist");
  const ExperimentConfig cfg = load_config(config_path);
  if (run_dir.empty()) run_dir = (run_root() / cfg.name).string();
  RunOptions opts;
  opts.run_dir = run_dir;
  opts.log = [](const std::string& s) { std::cerr << s << std::endl; };
  const RunResult r = run_federation(cfg, opts);
  nlohmann::json out{{"run", run_dir},
                     {"accuracy", r.final_accuracy},
                     {"ssim", r.final_ssim},
                     {"checkpoint",
                      (std::filesystem::path(run_dir) / "checkpoints" /
                       ("round_" + std::to_string(cfg.agg.rounds)))
                          .string()}};
  std::cout << out.dump() << std::endl;
  return kExitOk;
}

int cmd_verify(const std::string& ckpt_path, const std::string& key_path, double tau,
               const std::string& image, const std::string& report) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const WatermarkKey key = load_key(key_path);
  VerifyOptions opts;
  opts.tau = tau;
  opts.checkpoint_id = std::filesystem::path(ckpt_path).filename().string() + "@" +
                       hex64(fnv1a64(read_file_bytes(ckpt_path))).substr(0, 8);
  opts.image_out = image.empty() ? std::filesystem::path(key_path).replace_extension(".verify.png")
                                 : std::filesystem::path(image);
  const VerificationReport rep = verify(ckpt, key, opts);
  const std::string j = rep.to_json().dump();
  const std::filesystem::path report_path =
      report.empty() ? std::filesystem::path(key_path).replace_extension(".verify.json")
                     : std::filesystem::path(report);
  std::ofstream(report_path) << rep.to_json().dump(2) << "\n";
  std::cout << j << std::endl;
  return rep.pass ? kExitOk : kExitVerifyFail;
}

struct AttackArgs {
  std::string checkpoint, kind, config, run_dir, key, out, record, attacker_image, target_image;
  std::string mode = "untargeted";
  AttackConfig cfg;
  std::string taus;
};

int cmd_attack(AttackArgs a) {
  namespace fs = std::filesystem;
  a.cfg.kind = attack_kind_from_string(a.kind);
  if (a.mode == "targeted") {
    a.cfg.mode = ForgeMode::kTargeted;
  } else if (a.mode == "untargeted") {
    a.cfg.mode = ForgeMode::kUntargeted;
  } else {
    throw UsageError("--mode must be targeted or untargeted");
  }
  if (!a.taus.empty()) {
    a.cfg.taus.clear();
    std::stringstream ss(a.taus);
    std::string t;
    while (std::getline(ss, t, ',')) a.cfg.taus.push_back(std::stod(t));
  }
  a.cfg.validate();
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const ExperimentConfig exp = config_for_data(a.config, a.run_dir);
  a.cfg.overwrite = exp.train;
  const DataBundle data = prepare_data(exp.data, exp.agg.clients, exp.seed);
  std::optional<WatermarkKey> key;
  if (!a.key.empty()) key = load_key(a.key);

  auto accuracy = [&](const Checkpoint& c) {
    ModelGraph g = ModelGraph::from_checkpoint(c);
    return evaluate_accuracy(g, data.test);
  };
  auto legit_ssim = [&](const Checkpoint& c) -> nlohmann::json {
    if (!key) return nullptr;
    return verify(c, *key).ssim;
  };

  nlohmann::json rec;
  rec["attack"] = a.kind;
  rec["checkpoint"] = a.checkpoint;
  rec["seed"] = a.cfg.seed;
  rec["accuracy_before"] = accuracy(ckpt);
  rec["ssim_before"] = legit_ssim(ckpt);
  Checkpoint attacked = ckpt;
  switch (a.cfg.kind) {
    case AttackKind::kPrune:
      rec["ratio"] = a.cfg.ratio;
      attacked = prune(ckpt, a.cfg.ratio);
      break;
    case AttackKind::kQuantize:
      rec["bits"] = a.cfg.bits;
      attacked = quantize(ckpt, a.cfg.bits);
      break;
    case AttackKind::kFinetune:
      rec["rounds"] = a.cfg.rounds;
      rec["lr"] = a.cfg.lr;
      attacked = finetune(ckpt, data.holdout, a.cfg.rounds, a.cfg.lr, a.cfg.momentum,
                          a.cfg.batch_size, a.cfg.seed);
      break;
    case AttackKind::kOverwrite: {
      rec["rounds"] = a.cfg.rounds;
      const WatermarkImage wm = image_or_logo(a.attacker_image, ckpt.arch.input, a.cfg.seed);
      OverwriteResult o = overwrite(ckpt, wm, data.holdout, a.cfg.overwrite, a.cfg.rounds, a.cfg.seed);
      attacked = std::move(o.model);
      rec["attacker_ssim_own"] = o.attacker_ssim.empty() ? 0.0 : o.attacker_ssim.back();
      if (key) {
        WatermarkKey probe = o.attacker_key;
        probe.reference = key->reference;
        probe.digest = key->digest;
        rec["attacker_ssim_vs_legit"] = verify(attacked, probe).ssim;
      }
      break;
    }
    case AttackKind::kForge: {
      rec["mode"] = a.mode;
      rec["steps"] = a.cfg.steps;
      rec["attempts"] = a.cfg.attempts;
      WatermarkImage target;
      if (!a.target_image.empty()) {
        target = image_or_logo(a.target_image, ckpt.arch.input, a.cfg.seed);
      } else if (key) {
        target = key->reference_image();
      } else if (a.cfg.mode == ForgeMode::kTargeted) {
        throw UsageError("targeted forgery needs --target-image or --key");
      } else {
        target = random_image(ckpt.arch.input, a.cfg.seed);
      }
      const auto attempts =
          forge(ckpt, target, a.cfg.mode, a.cfg.steps, a.cfg.attempts, a.cfg.forge_lr, a.cfg.seed);
      if (key) {
        const ForgeryScore sc = score_forgery(ckpt, *key, attempts, a.cfg.taus);
        nlohmann::json table = nlohmann::json::array();
        for (std::size_t i = 0; i < sc.taus.size(); ++i)
          table.push_back({{"tau", sc.taus[i]}, {"asr", sc.asr[i]}});
        rec["asr"] = table;
        rec["ssim_attempts"] = sc.ssim;
      }
      break;
    }
  }
  rec["accuracy_after"] = accuracy(attacked);
  rec["ssim_after"] = legit_ssim(attacked);

  fs::path out = a.out, record = a.record;
  const fs::path base = a.run_dir.empty() ? fs::path(a.checkpoint).parent_path()
                                          : fs::path(a.run_dir) / "attacks";
  if (out.empty()) out = base / (a.kind + ".ckpt");
  if (record.empty()) record = base / (a.kind + ".json");
  if (a.cfg.kind != AttackKind::kForge) {
    save_checkpoint(attacked, out);
    rec["output"] = out.string();
  }
  fs::create_directories(record.parent_path().empty() ? fs::path(".") : record.parent_path());
  std::ofstream(record) << rec.dump(2) << "\n";
  std::cout << rec.dump() << std::endl;
  return kExitOk;
}

int cmd_capacity(std::size_t bits, const std::string& dataset, int rounds, std::string run_dir,
                 std::uint64_t seed) {
  ExperimentConfig cfg = dataset_preset(dataset);
  cfg.seed = seed;
  cfg.agg.rounds = rounds;
  cfg.name = "capacity-" + dataset;
  if (run_dir.empty()) run_dir = (run_root() / cfg.name).string();
  RunOptions opts;
  opts.run_dir = run_dir;
  opts.log = [](const std::string& s) { std::cerr << s << std::endl; };
  const CapacityResult r = capacity_experiment(cfg, bits, opts);
  nlohmann::json j = r.to_json();
  j["run"] = run_dir;
  std::ofstream(std::filesystem::path(run_dir) / "capacity.json") << j.dump(2) << "\n";
  std::cout << j.dump() << std::endl;
  return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Federated watermarking lab"};
  app.require_subcommand(1);

  std::string config, run_dir;
  auto* train = app.add_subcommand("train", "Run a federation from a JSON config");
  train->add_option("--config", config, "Experiment config (JSON)")->required();
  train->add_option("--run-dir", run_dir, "Output directory (default $FEDMARK_RUN_ROOT/<name>)");

  std::string ckpt, key, image, report;
  double tau = 0.5;
  auto* ver = app.add_subcommand("verify", "Verify a checkpoint against a watermark key");
  ver->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ver->add_option("--key", key, "Watermark key file")->required();
  ver->add_option("--tau", tau, "SSIM threshold")->check(CLI::Range(-1.0, 1.0));
  ver->add_option("--image", image, "Where to write the reconstruction (PNG)");
  ver->add_option("--report", report, "Where to write the JSON report");

  AttackArgs aa;
  auto* att = app.add_subcommand("attack", "Attack a checkpoint");
  att->add_option("--checkpoint", aa.checkpoint, "Checkpoint file")->required();
  att->add_option("--kind", aa.kind, "prune | finetune | quantize | overwrite | forge")->required();
  att->add_option("--config", aa.config, "Config providing the datasets");
  att->add_option("--run-dir", aa.run_dir, "Run directory (config and output location)");
  att->add_option("--key", aa.key, "Legitimate key, used only to score the outcome");
  att->add_option("--out", aa.out, "Attacked checkpoint path");
  att->add_option("--record", aa.record, "JSON record path");
  att->add_option("--ratio", aa.cfg.ratio, "Pruning ratio");
  att->add_option("--bits", aa.cfg.bits, "Quantization bits (2, 4, 8, 16)");
  att->add_option("--rounds", aa.cfg.rounds, "Fine-tuning epochs or overwrite rounds");
  att->add_option("--lr", aa.cfg.lr, "Fine-tuning learning rate");
  att->add_option("--attacker-image", aa.attacker_image, "Attacker watermark for overwriting");
  att->add_option("--mode", aa.mode, "Forgery mode: targeted | untargeted");
  att->add_option("--steps", aa.cfg.steps, "Forgery optimization steps");
  att->add_option("--attempts", aa.cfg.attempts, "Forgery attempts");
  att->add_option("--taus", aa.taus, "Comma-separated thresholds for the ASR table");
  att->add_option("--target-image", aa.target_image, "Targeted forgery image");
  att->add_option("--seed", aa.cfg.seed, "Attack seed");

  std::size_t bits = 784;
  std::string dataset = "synthetic-gray";
  int rounds = 30;
  std::uint64_t seed = 1;
  std::string cap_dir;
  auto* cap = app.add_subcommand("capacity", "Dot-code capacity run and bit error rate");
  cap->add_option("--bits", bits, "Payload length");
  cap->add_option("--dataset", dataset, "synthetic-gray | synthetic-rgb");
  cap->add_option("--rounds", rounds, "Training rounds");
  cap->add_option("--run-dir", cap_dir, "Output directory");
  cap->add_option("--seed", seed, "Master seed");

  std::string rep_dir;
  auto* rep = app.add_subcommand("report", "Summarize a run directory");
  rep->add_option("--run-dir", rep_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << std::flush;
    print_error("usage", e.what());
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(config, run_dir);
    if (*ver) return cmd_verify(ckpt, key, tau, image, report);
    if (*att) return cmd_attack(aa);
    if (*cap) return cmd_capacity(bits, dataset, rounds, cap_dir, seed);
    if (*rep) {
      std::cout << make_report(rep_dir).dump() << std::endl;
      return kExitOk;
    }
  } catch (const UsageError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    print_error("invalid_argument", e.what());
    return kExitUsage;
  } catch (const FormatError& e) {
    print_error("format", e.what());
    return kExitError;
  } catch (const ShapeError& e) {
    print_error("shape", e.what());
    return kExitError;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return kExitError;
  }
  return kExitUsage;
}

}  // namespace fedmark
