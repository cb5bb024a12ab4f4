// Copyright 2026 The SparseInst-Desk Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// spin: synth | train | infer | eval | bench
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "spin/checkpoint.hpp"
#include "spin/data.hpp"
#include "spin/pipeline.hpp"
#include "spin/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

void WriteJson(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

fs::path SiblingOf(const fs::path& file, const std::string& name) {
  return file.has_parent_path() ? file.parent_path() / name : fs::path(name);
}

struct SynthArgs {
  std::uint64_t seed = 0;
  int count = 20;
  int size = 128;
  int max_objects = 4;
  std::string out;
};

int RunSynth(const SynthArgs& a) {
  const spin::Dataset ds = spin::GenerateDataset(a.seed, a.count, a.size, a.size, a.max_objects);
  spin::WriteDataset(ds, a.out);
  std::size_t instances = 0;
  for (const auto& s : ds.scenes) instances += s.instances.size();
  std::printf("wrote %d scenes (%zu instances) to %s\nchecksum %s\n", a.count, instances,
              a.out.c_str(), spin::FileChecksum(a.out).c_str());
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<long> steps;
};

int RunTrain(const TrainArgs& a) {
  spin::TrainConfig cfg = a.config.empty() ? spin::TrainConfig{} : spin::LoadTrainConfig(a.config);
  if (a.steps) cfg.steps = *a.steps;
  const spin::Dataset ds = spin::ReadDataset(a.data);
  const long every = std::max<long>(1, cfg.steps / 20);
  spin::Train(cfg, ds, a.out, [every](long step, const spin::LossReport& r) {
    if (step % every == 0) {
      std::printf("step %6ld  loss %.5f  cls %.5f  dice %.5f  pix %.5f  obj %.5f\n", step,
                  r.total, r.cls, r.dice, r.pix, r.obj);
      std::fflush(stdout);
    }
  });
  const fs::path model = fs::path(a.out) / "model.spin";
  std::printf("saved %s\nchecksum %s\n", model.c_str(), spin::FileChecksum(model).c_str());
  return 0;
}

struct InferArgs {
  std::string checkpoint;
  std::string image;
  double threshold = spin::kDefaultScoreThreshold;
  std::string dump_masks;
};

int RunInfer(const InferArgs& a) {
  const auto model = spin::LoadModel(spin::LoadCheckpoint(a.checkpoint));
  int h = 0, w = 0;
  const auto rgb = spin::ReadPpm(a.image, &h, &w);
  if (h != model->config().input_h || w != model->config().input_w) {
    throw std::runtime_error("image is " + std::to_string(w) + "x" + std::to_string(h) +
                             " but the checkpoint expects " +
                             std::to_string(model->config().input_w) + "x" +
                             std::to_string(model->config().input_h));
  }
  const std::vector<float> planar = spin::RgbToPlanar(rgb, h, w);
  const auto dets = spin::Infer(*model, spin::Tensor<float>({3, h, w}, planar), a.threshold);
  std::printf("%zu detection(s) at threshold %.3f\n", dets.size(), a.threshold);
  std::printf("%-5s %-10s %10s %8s\n", "slot", "class", "confidence", "pixels");
  for (const auto& d : dets) {
    std::size_t pixels = 0;
    for (auto v : d.mask) pixels += v;
    const std::string label = d.category < spin::kNumShapeClasses
                                  ? spin::ShapeClassNames()[d.category]
                                  : std::to_string(d.category);
    std::printf("%-5d %-10s %10.4f %8zu\n", d.slot, label.c_str(), d.confidence, pixels);
  }
  if (!a.dump_masks.empty()) {
    spin::DumpMasks(a.dump_masks, planar, h, w, dets);
    std::printf("masks and overlay written to %s\n", a.dump_masks.c_str());
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  double threshold = spin::kDefaultScoreThreshold;
  std::string out;
};

int RunEval(const EvalArgs& a) {
  const auto model = spin::LoadModel(spin::LoadCheckpoint(a.checkpoint));
  const spin::Dataset ds = spin::ReadDataset(a.data);
  const spin::EvalResult r = spin::Evaluate(*model, ds, a.threshold);
  std::fputs(r.Table().c_str(), stdout);
  const fs::path out = a.out.empty() ? SiblingOf(a.checkpoint, "eval.json") : fs::path(a.out);
  WriteJson(out, r.ToJson());
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

struct BenchArgs {
  std::string checkpoint;
  int n = 50;
  int warmup = 5;
  std::string out;
};

int RunBench(const BenchArgs& a) {
  const auto model = spin::LoadModel(spin::LoadCheckpoint(a.checkpoint));
  const spin::TimingReport r = spin::Bench(*model, a.n, a.warmup);
  std::fputs(r.Table().c_str(), stdout);
  const fs::path out = a.out.empty() ? SiblingOf(a.checkpoint, "bench.json") : fs::path(a.out);
  WriteJson(out, r.ToJson());
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale sparse instance segmentation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic shapes dataset");
  synth_cmd->add_option("--seed", synth.seed, "Dataset seed")->required();
  synth_cmd->add_option("--count", synth.count, "Number of scenes")->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--size", synth.size, "Square image size (multiple of 32)")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--max-objects", synth.max_objects, "Objects per scene upper bound")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train.config, "JSON training config")
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--steps", train.steps, "Override the configured step count")
      ->check(CLI::NonNegativeNumber);

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Run inference on one PPM image");
  infer_cmd->add_option("--checkpoint", infer.checkpoint, "Model checkpoint")->required();
  infer_cmd->add_option("--image", infer.image, "Input image (P6 PPM)")->required();
  infer_cmd->add_option("--threshold", infer.threshold, "Confidence threshold")
      ->check(CLI::Range(0.0, 1.0));
  infer_cmd->add_option("--dump-masks", infer.dump_masks,
                        "Directory for per-instance masks and an overlay");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate mask AP on a dataset");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
  eval_cmd->add_option("--threshold", eval.threshold, "Confidence threshold")
      ->check(CLI::Range(0.0, 1.0));
  eval_cmd->add_option("--out", eval.out, "JSON report path (default: next to checkpoint)");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Per-stage inference latency");
  bench_cmd->add_option("--checkpoint", bench.checkpoint, "Model checkpoint")->required();
  bench_cmd->add_option("--n", bench.n, "Timed images (>= 10)")->check(CLI::Range(10, 1000000));
  bench_cmd->add_option("--warmup", bench.warmup, "Warmup images (>= 3)")
      ->check(CLI::Range(3, 1000000));
  bench_cmd->add_option("--out", bench.out, "JSON report path (default: next to checkpoint)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return kUsageError;
  }

  try {
    if (*synth_cmd) return RunSynth(synth);
    if (*train_cmd) return RunTrain(train);
    if (*infer_cmd) return RunInfer(infer);
    if (*eval_cmd) return RunEval(eval);
    if (*bench_cmd) return RunBench(bench);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
