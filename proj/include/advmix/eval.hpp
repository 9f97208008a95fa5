#pragma once

// Evaluation: clean and perturbed accuracy, environment risks, invariance
// over a color grid, and CSV / PPM emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advmix/attacks.hpp"
#include "advmix/classifier.hpp"
#include "advmix/generators.hpp"

namespace advmix::eval {

double eval_clean(const model::Classifier& f, std::span<const double> images,
                  std::span<const int> labels);
// Accuracy per label value in [0, classes); NaN for classes that never occur.
std::vector<double> per_class_accuracy(const model::Classifier& f, std::span<const double> images,
                                       std::span<const int> labels);

struct RobustResult {
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
  std::size_t attacked = 0;
  std::size_t successes = 0;
  std::size_t errors = 0;
  double mean_restarts_to_success = 0.0;
  double mean_steps_to_success = 0.0;
  // One entry per example; empty image for examples that were not attacked.
  std::vector<attack::AttackReport> reports;
};

// An example is robust iff it is classified correctly on `clean_images` and
// no variant found by the latent attack is misclassified. Cleanly wrong
// examples are never attacked. More than 1% failed attacks is an error.
RobustResult eval_robust(const model::Classifier& f, const gen::Decoder& dec,
                         std::span<const gen::FactorLatent> latents, std::span<const int> labels,
                         std::span<const double> clean_images, const attack::LatentAttackConfig& cfg);

// Fraction of latents whose predicted label is the same at every grid z_perp.
double eval_invariance(const model::Classifier& f, const gen::Decoder& dec,
                       std::span<const gen::FactorLatent> latents,
                       std::span<const std::vector<double>> grid);

std::vector<std::vector<double>> rgb_grid();
// k^3 points with coordinates j / (k - 1).
std::vector<std::vector<double>> cube_grid(std::size_t k = 5);

struct ReportRow {
  std::string experiment_id;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

// Columns: experiment_id, metric, value, seed, config_hash. Values use %.17g.
void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path);
std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

struct EvalReport {
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
  std::vector<double> env_risks;
  double env_max = 0.0;
  double invariance_rate = 0.0;
  std::vector<double> per_class_clean;
  double mean_restarts_to_success = 0.0;
  double mean_steps_to_success = 0.0;

  std::vector<ReportRow> rows(const std::string& experiment_id, std::uint64_t seed,
                              const std::string& config_hash) const;
};

// round(255 v), v clamped to [0,1].
std::uint8_t pixel_byte(double v);
void write_ppm(const std::filesystem::path& path, std::span<const double> image, std::size_t height,
               std::size_t width);
// 0.5 + d / (2 max|d|) per value, so zero difference maps to mid-gray.
std::vector<double> rescaled_difference(std::span<const double> a, std::span<const double> b);
// Original, variant and rescaled difference side by side.
void write_triplet_ppm(const std::filesystem::path& path, std::span<const double> original,
                       std::span<const double> variant, std::size_t height, std::size_t width);

}  // namespace advmix::eval
