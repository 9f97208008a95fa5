#pragma once

// Small datasets and models shared by the unit and acceptance tests.

#include <memory>
#include <vector>

#include "advmix/attacks.hpp"
#include "advmix/classifier.hpp"
#include "advmix/data.hpp"
#include "advmix/generators.hpp"
#include "advmix/training.hpp"

namespace advmix::testing {

inline std::shared_ptr<const data::GrayDataset> glyph_bank(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return std::make_shared<const data::GrayDataset>(
      data::pad_to(data::synthesize_digits(n, rng), data::kImageSize));
}

inline std::vector<data::ColoredExample> colored(const data::GrayDataset& bank, data::ColorMode mode,
                                                 double sigma, std::uint64_t seed) {
  data::ColorSpec spec;
  spec.mode = mode;
  spec.sigma = sigma;
  Rng rng(seed);
  return data::colorize(bank, spec, rng);
}

// A linear model trained on palette-colored digits at sigma = 0, so that it
// leans on color and latent attacks flip it for some colors but not others.
inline model::Classifier color_reliant_linear(const data::GrayDataset& bank, std::size_t epochs,
                                              std::uint64_t seed) {
  const auto images = train::to_image_set(colored(bank, data::ColorMode::kGaussianPalette, 0.0, seed));
  Rng init(seed + 1), rng(seed + 2);
  train::RegimeConfig cfg;
  cfg.epochs = epochs;
  train::TrainData td;
  td.images = &images;
  return train::train(cfg, td, model::Classifier::linear(images.dim, data::kNumClasses, init), rng).model;
}

// Trained on uniformly random colors: mostly color-robust, so latent attacks
// succeed on a minority of inputs.
inline model::Classifier color_robust_linear(const data::GrayDataset& bank, std::size_t epochs,
                                             std::uint64_t seed) {
  const auto images = train::to_image_set(colored(bank, data::ColorMode::kUniformRandom, 0.0, seed));
  Rng init(seed + 1), rng(seed + 2);
  train::RegimeConfig cfg;
  cfg.epochs = epochs;
  train::TrainData td;
  td.images = &images;
  return train::train(cfg, td, model::Classifier::linear(images.dim, data::kNumClasses, init), rng).model;
}

// Exhaustive search over the 21^3 color lattice restricted to the l-inf
// balls of every restart the attack would draw.
struct GridOracleCase {
  bool attack_success = false;
  bool oracle_success = false;
  double attack_loss = 0.0;
  double oracle_best = 0.0;
  double slack = 0.0;  // Lipschitz bound on the loss change over one lattice cell
  std::size_t grid_points = 0;
};

inline GridOracleCase grid_oracle(const model::Classifier& f, const gen::ProceduralGlyphDecoder& dec,
                                  const gen::FactorLatent& z, int y,
                                  const attack::LatentAttackConfig& cfg) {
  GridOracleCase out;
  const auto rep = attack::latent_pgd(f, dec, z, y, cfg);
  out.attack_success = rep.success;
  out.attack_loss = rep.loss;

  constexpr int kSteps = 20;
  constexpr double h = 1.0 / kSteps;
  std::vector<gen::FactorLatent> points;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
    const auto z0 = dec.sample_perp(rng);
    const auto region = attack::restart_region(dec, z0, cfg);
    for (int a = 0; a <= kSteps; ++a)
      for (int b = 0; b <= kSteps; ++b)
        for (int c = 0; c <= kSteps; ++c) {
          const std::vector<double> g{a * h, b * h, c * h};
          bool inside = true;
          for (int d = 0; d < 3; ++d) inside = inside && std::abs(g[d] - region.center[d]) <= region.radius_inf;
          if (inside) points.push_back({z.z_par, g});
        }
  }
  out.grid_points = points.size();
  const std::size_t classes = f.num_classes();
  const auto logits = f.logit_values(gen::decode_batch(dec, points));
  const std::vector<int> labels(points.size(), y);
  const auto ce = attack::row_cross_entropy(logits, classes, labels);
  out.oracle_best = -1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    out.oracle_best = std::max(out.oracle_best, ce[i]);
    const double* row = logits.data() + i * classes;
    out.oracle_success = out.oracle_success || (std::max_element(row, row + classes) - row) != y;
  }

  // logits_k = sum_c color_c a_kc + b_k while the clamps are inactive, so
  // |grad CE| <= 2 max_k |a_k| and a lattice cell spans at most h sqrt(3).
  const auto& w = f.parameters()[0];
  const auto glyph = dec.glyphs().image(dec.glyph_index(z.z_par[0]));
  double max_norm = 0.0;
  for (std::size_t k = 0; k < classes; ++k) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      double a = 0.0;
      for (std::size_t p = 0; p < glyph.size(); ++p) a += glyph[p] * w.values[(p * 3 + c) * classes + k];
      n2 += a * a;
    }
    max_norm = std::max(max_norm, std::sqrt(n2));
  }
  out.slack = 2.0 * max_norm * h * std::sqrt(3.0);
  return out;
}

}  // namespace advmix::testing
