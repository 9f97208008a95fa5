#pragma once

// Latent inversion: find (z_par, z_perp) whose decoding reproduces an image,
// steered by pixel, perceptual-feature and style-mixing losses.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advmix/autodiff.hpp"
#include "advmix/classifier.hpp"
#include "advmix/data.hpp"
#include "advmix/generators.hpp"

namespace advmix::inv {

struct EncoderConfig {
  std::size_t init_samples = 256;  // M
  std::size_t iterations = 400;    // N
  double step = 0.5;  // latent-space length of the first move, halved on every rejected step
  // Index 0 weighs the pixel term, then one weight per feature layer.
  std::vector<double> alpha_weights{1.0, 1.0, 1.0, 1.0};
  std::vector<double> beta_weights{0.2, 0.2, 0.2};
  // z_perp partners drawn once per image for the mixing loss.
  std::size_t mix_partners = 4;
  bool use_mix = true;

  void validate(std::size_t feature_layers) const;
};

// Perceptual features: the per-layer activations of a small trained
// classifier. The classifier sees the unit-norm luminance profile of the
// image, so the features describe shape and ignore color.
class FeatureNet {
 public:
  // `net` takes [B, pixels] profiles.
  explicit FeatureNet(model::Classifier net, std::size_t channels = 3);

  static ad::Tensor profile(const ad::Tensor& x, std::size_t channels);
  // Profiles of a row-major [rows, pixels * channels] batch.
  static std::vector<double> profile_values(std::span<const double> images, std::size_t rows,
                                            std::size_t channels);

  std::size_t layers() const { return net_.hidden().size() + 1; }
  std::size_t input_dim() const { return net_.input_dim() * channels_; }
  std::vector<ad::Tensor> features(const ad::Tensor& x) const {
    return net_.forward(profile(x, channels_)).activations;
  }
  const model::Classifier& classifier() const { return net_; }

 private:
  model::Classifier net_;
  std::size_t channels_;
};

// Per-row alpha_0 ||x_hat - x||^2 + sum_i alpha_i ||A_hat_i - A_i||^2, as [B,1].
ad::Tensor reconstruct_loss_rows(const ad::Tensor& x_hat, const ad::Tensor& x,
                                 std::span<const ad::Tensor> feats_hat,
                                 std::span<const ad::Tensor> feats,
                                 std::span<const double> alpha_weights);
// Per-row sum_i beta_i ||A_mix_i - A_i||^2, as [B,1].
ad::Tensor mix_loss_rows(std::span<const ad::Tensor> feats_mixed, std::span<const ad::Tensor> feats,
                         std::span<const double> beta_weights);

// Batch totals of the above.
ad::Tensor reconstruct_loss(const ad::Tensor& x_hat, const ad::Tensor& x,
                            std::span<const ad::Tensor> feats_hat, std::span<const ad::Tensor> feats,
                            std::span<const double> alpha_weights);
ad::Tensor mix_loss(std::span<const ad::Tensor> feats_mixed, std::span<const ad::Tensor> feats,
                    std::span<const double> beta_weights);

struct EncodeResult {
  gen::FactorLatent z;
  double initial_loss = 0.0;
  double loss = 0.0;
  std::vector<double> loss_trace;  // accepted loss after every iteration
  std::size_t accepted_steps = 0;
};

// Inverts `count` images (row-major in `images`). Image i draws its init
// samples and mixing partners from seeds[i]. When `init` is given it replaces
// the averaged-latent start.
std::vector<EncodeResult> encode_batch(const gen::LearnedDecoder& dec, const FeatureNet& net,
                                       std::span<const double> images, const EncoderConfig& cfg,
                                       std::span<const std::uint64_t> seeds,
                                       std::span<const gen::FactorLatent> init = {});

EncodeResult encode(const gen::LearnedDecoder& dec, const FeatureNet& net,
                    std::span<const double> image, const EncoderConfig& cfg, std::uint64_t seed);

// Closed-form inverse for images built by the data module.
gen::FactorLatent invert_procedural(const gen::ProceduralGlyphDecoder& dec,
                                    const data::ColoredExample& example);

struct LatentDataset {
  std::vector<gen::FactorLatent> latents;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

LatentDataset invert_all(const gen::ProceduralGlyphDecoder& dec,
                         const std::vector<data::ColoredExample>& examples);

// "ADVMIXL1": count, d_par, d_perp (int32 LE), then per record label (int32),
// z_par, z_perp (float64 LE).
void save_latents(const LatentDataset& dataset, const std::filesystem::path& path);
LatentDataset load_latents(const std::filesystem::path& path);

}  // namespace advmix::inv
