#pragma once

// Restarted latent-space PGD over z_perp, input-space l-inf PGD, and the
// worst case over a fixed list of environments.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advmix/classifier.hpp"
#include "advmix/generators.hpp"
#include "advmix/rng.hpp"

namespace advmix::attack {

struct LatentAttackConfig {
  std::size_t restarts = 5;  // N_r
  std::size_t steps = 10;    // K
  double alpha = 0.0075;
  double epsilon = 0.03;
  std::uint64_t seed = 0;
  // Keep z_perp on {sum = 1} (mixtures of the base colors).
  bool simplex = false;

  void validate() const;
};

struct AttackReport {
  bool success = false;
  std::vector<double> image;
  std::vector<double> z_perp;
  double loss = 0.0;  // surrogate loss of the returned image
  std::size_t restarts_used = 0;
  std::size_t steps_used = 0;
  std::vector<double> loss_trace;  // every visited iterate, in order
  // Set when every restart hit a non-finite value.
  bool failed = false;
  std::string error;
};

// Per-example seed used by the batched attack for example `index`.
inline std::uint64_t example_seed(const LatentAttackConfig& cfg, std::uint64_t index) {
  return derive_seed(cfg.seed, index);
}

// Attacks every example; example i uses `seeds[i]`. Failures are reported
// per example, never thrown.
std::vector<AttackReport> latent_pgd_batch(const model::Classifier& f, const gen::Decoder& dec,
                                           std::span<const gen::FactorLatent> latents,
                                           std::span<const int> labels,
                                           const LatentAttackConfig& cfg,
                                           std::span<const std::uint64_t> seeds);

// Same, with seeds example_seed(cfg, i).
std::vector<AttackReport> latent_pgd_batch(const model::Classifier& f, const gen::Decoder& dec,
                                           std::span<const gen::FactorLatent> latents,
                                           std::span<const int> labels,
                                           const LatentAttackConfig& cfg);

// Single example with seed cfg.seed. Throws NumericError when every restart
// diverges.
AttackReport latent_pgd(const model::Classifier& f, const gen::Decoder& dec,
                        const gen::FactorLatent& z, int y, const LatentAttackConfig& cfg);

// The l-inf neighborhood used for a restart started at z0.
gen::PerpRegion restart_region(const gen::Decoder& dec, std::span<const double> z0,
                               const LatentAttackConfig& cfg);

// Random start in the eps-ball, signed-gradient steps, clipped to the ball
// and to [0,1]. `x` holds one image per label, row-major.
std::vector<double> input_pgd(const model::Classifier& f, std::span<const double> x,
                              std::span<const int> labels, double epsilon, std::size_t steps,
                              double step_size, Rng& rng);

struct EnvironmentRisk {
  std::vector<double> risks;  // 0-1 risk per environment
  double max = 0.0;
  double mean = 0.0;
};

EnvironmentRisk environment_worst_case(const model::Classifier& f, const gen::Decoder& dec,
                                       std::span<const gen::FactorLatent> latents,
                                       std::span<const int> labels,
                                       std::span<const std::vector<double>> env_perps);

// Per-row cross entropy computed from raw logits.
std::vector<double> row_cross_entropy(std::span<const double> logits, std::size_t classes,
                                      std::span<const int> labels);

}  // namespace advmix::attack
