#pragma once

// Declarative experiment configuration and the pipeline stages the CLI and
// the presets are built from.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "advmix/attacks.hpp"
#include "advmix/classifier.hpp"
#include "advmix/data.hpp"
#include "advmix/eval.hpp"
#include "advmix/generators.hpp"
#include "advmix/inversion.hpp"
#include "advmix/training.hpp"

namespace advmix::exp {

struct DatasetConfig {
  std::string source = "synthetic";  // or "mnist"
  std::string mnist_dir;
  std::size_t train_count = 2000;
  std::size_t test_count = 1000;
  data::ColorSpec train;
  data::ColorSpec test;  // uniform_random unless overridden

  DatasetConfig() { train.mode = data::ColorMode::kGaussianPalette; }
};

struct DecoderConfig {
  std::string kind = "procedural";  // or "learned"
  data::BiasProfile bias_profile = data::BiasProfile::kUnbiased;
  // Procedural map stage: "train_colors", "uniform_box" or "rgb".
  std::string sampler = "train_colors";
  gen::LearnedDecoderOptions train_params;
};

struct EncoderSection {
  inv::EncoderConfig config;
  std::size_t feature_epochs = 3;
  std::vector<std::size_t> feature_hidden{64, 32};
};

struct ModelConfig {
  model::Arch arch = model::Arch::kMlp2;
  std::vector<std::size_t> hidden{256, 128};
};

struct EvalConfig {
  attack::LatentAttackConfig attack;  // restarts default to 10
  std::string grid = "cube";         // or "rgb"
  std::string sampler = "uniform_box";  // or "rgb"
  bool robust = true;
  std::size_t robust_count = 0;  // 0 = every test example
  std::size_t images = 4;        // variant PPMs written by `eval`

  EvalConfig() { attack.restarts = 10; }
};

struct ExperimentConfig {
  std::string id = "experiment";
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  DecoderConfig decoder;
  EncoderSection encoder;
  ModelConfig model;
  train::RegimeConfig regime;  // regime.attack holds the training-time attack
  EvalConfig eval;
  std::string output_dir = "out";

  // Unknown keys and ill-typed or out-of-range values throw ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  // Every field, keys sorted.
  nlohmann::json to_json() const;
  // FNV-1a 64 of the canonical dump without the output section, as 16 hex digits.
  std::string hash() const;
  void validate() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
// Writes config.json (canonical) next to the artifacts, with its hash.
void echo_config(const ExperimentConfig& cfg, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Pipeline stages. Randomness comes from named sub-streams of cfg.seed.

struct DataBundle {
  std::shared_ptr<const data::GrayDataset> train_glyphs;  // padded to 32x32
  std::shared_ptr<const data::GrayDataset> test_glyphs;
  std::vector<data::ColoredExample> train;
  std::vector<data::ColoredExample> test;
};

DataBundle build_data(const ExperimentConfig& cfg);
void save_data(const DataBundle& bundle, const std::filesystem::path& dir);
DataBundle load_data(const std::filesystem::path& dir);

gen::ColorSampler make_sampler(const std::string& name,
                               const std::vector<data::ColoredExample>& colored);

gen::LearnedDecoder train_decoder(const ExperimentConfig& cfg, const DataBundle& bundle,
                                  gen::LearnedDecoder::TrainResult* result = nullptr);
inv::FeatureNet train_feature_net(const ExperimentConfig& cfg, const DataBundle& bundle);
inv::LatentDataset encode_training_set(const ExperimentConfig& cfg, const gen::LearnedDecoder& dec,
                                       const inv::FeatureNet& net, const DataBundle& bundle);

model::Classifier init_classifier(const ExperimentConfig& cfg, std::size_t input_dim);
// `dec` and `latents` are required for randmix and advmix only.
train::TrainResult train_classifier(const ExperimentConfig& cfg, const DataBundle& bundle,
                                    const gen::Decoder* dec, const inv::LatentDataset* latents);

struct Evaluation {
  eval::EvalReport report;
  eval::RobustResult robust;
  std::vector<gen::FactorLatent> test_latents;
};

// Clean, per-class, perturbed (procedural decoder over the test glyphs),
// environment risks and invariance over the configured grid.
Evaluation evaluate(const ExperimentConfig& cfg, const model::Classifier& f, const DataBundle& bundle);

// ---------------------------------------------------------------------------
// Presets

std::vector<std::string> preset_names();
ExperimentConfig preset_config(const std::string& name);

using Progress = std::function<void(const std::string&)>;

struct PresetResult {
  std::vector<eval::ReportRow> rows;
  // NaN when absent.
  double value(const std::string& experiment_id, const std::string& metric) const;
};

// Runs the preset pipeline with `base` (from preset_config, possibly edited)
// and writes <out>/<preset>.csv plus config.json.
PresetResult run_preset(const std::string& name, const ExperimentConfig& base,
                        const std::filesystem::path& out_dir, const Progress& progress = {});

}  // namespace advmix::exp
