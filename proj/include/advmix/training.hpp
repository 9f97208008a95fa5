#pragma once

// Training regimes over one Adam loop: plain ERM, input-space adversarial
// training, mixup, random latent mixing and adversarial latent mixing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advmix/attacks.hpp"
#include "advmix/classifier.hpp"
#include "advmix/generators.hpp"
#include "advmix/inversion.hpp"

namespace advmix::train {

enum class Regime { kNominal, kAt, kMixup, kRandMix, kAdvMix };

std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);
// Regimes that draw their inputs through a decoder.
inline bool uses_decoder(Regime r) { return r == Regime::kRandMix || r == Regime::kAdvMix; }

struct RegimeConfig {
  Regime regime = Regime::kNominal;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  // at
  double at_epsilon = 0.1;
  std::size_t at_steps = 10;
  double at_step_size = 0.025;
  // mixup
  double mixup_alpha = 0.2;
  // advmix
  attack::LatentAttackConfig attack;

  void validate() const;
};

struct ImageSet {
  std::vector<double> pixels;  // size() * dim
  std::size_t dim = 0;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {pixels.data() + i * dim, dim}; }
};

ImageSet to_image_set(const std::vector<data::ColoredExample>& examples);

struct TrainData {
  const ImageSet* images = nullptr;          // nominal, at, mixup; accuracy logging
  const inv::LatentDataset* latents = nullptr;  // randmix, advmix
  const gen::Decoder* decoder = nullptr;        // randmix, advmix
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double attack_success_rate = -1.0;  // advmix and at only
  std::size_t skipped = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  // Columns: epoch, split, metric, value.
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  model::Classifier model;
  TrainLog log;
};

TrainResult train(const RegimeConfig& cfg, const TrainData& data, model::Classifier init, Rng& rng);

// Draws from Beta(a, b) as X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b).
double sample_beta(double a, double b, Rng& rng);

struct MixupBatch {
  std::vector<double> x;
  std::vector<double> y_soft;  // [B, classes]
  std::vector<double> lambdas;
};

// x = lambda x_a + (1 - lambda) x_b, y = lambda onehot(y_a) + (1 - lambda) onehot(y_b),
// one lambda ~ Beta(alpha, alpha) per pair. With `fixed_lambda` >= 0 that value is used.
MixupBatch batch_mixup(std::span<const double> x_a, std::span<const int> y_a,
                       std::span<const double> x_b, std::span<const int> y_b, std::size_t dim,
                       std::size_t classes, double alpha, Rng& rng, double fixed_lambda = -1.0);

struct AugmentedBatch {
  std::vector<double> images;
  std::vector<int> labels;
  std::vector<std::vector<double>> z_perp;
  std::size_t successes = 0;
  std::size_t skipped = 0;
};

// Each example re-rendered with a fresh map-stage z_perp; labels unchanged.
AugmentedBatch batch_randmix(std::span<const gen::FactorLatent> latents, std::span<const int> labels,
                             const gen::Decoder& dec, Rng& rng);

// Each example replaced by the attack's returned variant; labels unchanged.
// Examples whose attack fails are dropped; more than 1% dropped is an error.
AugmentedBatch batch_advmix(std::span<const gen::FactorLatent> latents, std::span<const int> labels,
                            const gen::Decoder& dec, const model::Classifier& snapshot,
                            const attack::LatentAttackConfig& cfg,
                            std::span<const std::uint64_t> seeds);

}  // namespace advmix::train
