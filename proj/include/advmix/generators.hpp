#pragma once

// Disentangled decoders over a latent space split into label-relevant
// coordinates (z_par) and label-independent coordinates (z_perp), plus the
// style-mixing operation, the map-stage samplers and the z_perp projection.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "advmix/autodiff.hpp"
#include "advmix/data.hpp"
#include "advmix/rng.hpp"

namespace advmix::gen {

using data::Color;

struct FactorLatent {
  std::vector<double> z_par;
  std::vector<double> z_perp;
};

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t size() const { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
};

using PerpBox = std::pair<std::vector<double>, std::vector<double>>;

class Decoder {
 public:
  virtual ~Decoder() = default;

  virtual std::size_t par_dim() const = 0;
  virtual std::size_t perp_dim() const = 0;
  virtual ImageShape image_shape() const = 0;

  // Batched differentiable rendering: z_par [B, par_dim] and
  // z_perp [B, perp_dim] (same graph) -> images [B, image_shape().size()].
  virtual ad::Tensor render(const ad::Tensor& z_par, const ad::Tensor& z_perp) const = 0;

  // Deterministic single-image decode. The default builds a one-row graph.
  virtual std::vector<double> decode(const FactorLatent& z) const;

  // Map stage: one z_perp draw. Never differentiated.
  virtual std::vector<double> sample_perp(Rng& rng) const = 0;

  // Valid coordinatewise range of z_perp, when the decoder has one.
  virtual std::optional<PerpBox> perp_box() const { return std::nullopt; }

  // Throws std::invalid_argument on latent dimension mismatch.
  void check(const FactorLatent& z) const;
};

std::vector<double> decode(const Decoder& dec, const FactorLatent& z);
// decode((a.z_par, b.z_perp))
std::vector<double> mix(const Decoder& dec, const FactorLatent& a, const FactorLatent& b);
std::vector<double> sample_perp(const Decoder& dec, Rng& rng);
// Renders many latents in chunks; images are concatenated row-major.
std::vector<double> decode_batch(const Decoder& dec, std::span<const FactorLatent> z);

// Builds [B, dim] from a list of equally sized rows.
std::vector<double> stack_rows(std::span<const std::vector<double>> rows, std::size_t dim);

// ---------------------------------------------------------------------------
// Map-stage sampler over colors.

class ColorSampler {
 public:
  // Uniform over [0,1]^3.
  static ColorSampler uniform_box();
  // Weighted choice among `colors` (uniform when `weights` is empty), plus
  // optional Gaussian jitter truncated at 5 std and clamped to [0,1].
  static ColorSampler discrete(std::vector<Color> colors, std::vector<double> weights = {},
                               double jitter_std = 0.0);

  Color sample(Rng& rng) const;

  bool is_uniform_box() const { return uniform_box_; }
  const std::vector<Color>& colors() const { return colors_; }
  const std::vector<double>& weights() const { return weights_; }
  double jitter_std() const { return jitter_std_; }

 private:
  bool uniform_box_ = true;
  std::vector<Color> colors_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
  double jitter_std_ = 0.0;
};

// ---------------------------------------------------------------------------

// Colors a bank of gray glyphs: pixel (h,w,c) = clamp01(G_i[h,w] * clamp01(color[c])).
// z_par = (i), z_perp = color. Exactly disentangled by construction.
class ProceduralGlyphDecoder final : public Decoder {
 public:
  ProceduralGlyphDecoder(std::shared_ptr<const data::GrayDataset> glyphs, ColorSampler sampler);

  std::size_t par_dim() const override { return 1; }
  std::size_t perp_dim() const override { return 3; }
  ImageShape image_shape() const override;
  ad::Tensor render(const ad::Tensor& z_par, const ad::Tensor& z_perp) const override;
  std::vector<double> decode(const FactorLatent& z) const override;
  std::vector<double> sample_perp(Rng& rng) const override;
  std::optional<PerpBox> perp_box() const override;

  static std::vector<double> render_pixels(std::span<const double> glyph, const Color& color);

  std::size_t glyph_index(double z_par) const;
  const data::GrayDataset& glyphs() const { return *glyphs_; }
  const ColorSampler& sampler() const { return sampler_; }

 private:
  std::shared_ptr<const data::GrayDataset> glyphs_;
  ColorSampler sampler_;
};

inline constexpr double kToyX1Std = 1.7320508075688772;  // sqrt(3)
inline constexpr double kToyX2Std = 1.0;

// Two-dimensional analytic decoder: (x1, x2) = (z_perp + n1, z_par + n2).
// render() returns the noise-free mean; decode_noisy() adds the noise.
class ToyDecoder final : public Decoder {
 public:
  std::size_t par_dim() const override { return 1; }
  std::size_t perp_dim() const override { return 1; }
  ImageShape image_shape() const override { return {1, 1, 2}; }
  ad::Tensor render(const ad::Tensor& z_par, const ad::Tensor& z_perp) const override;
  std::vector<double> sample_perp(Rng& rng) const override;
  std::optional<PerpBox> perp_box() const override;

  std::vector<double> decode_noisy(const FactorLatent& z, Rng& rng) const;
};

// ---------------------------------------------------------------------------
// Learned imitation decoder.

struct LearnedDecoderOptions {
  std::size_t par_dim = 16;
  std::size_t hidden = 128;
  std::size_t color_hidden = 8;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  double code_l2 = 1e-3;
  double jitter_std = 0.02;
};

// Dense decoder: h = relu([z_par, z_perp] W1 + b1), gray = sigmoid(h W2 + b2),
// color = z_perp + relu(z_perp U + u) V + v, image = clamp01(gray (x) color).
// Trained jointly with one free z_par code per training image.
class LearnedDecoder final : public Decoder {
 public:
  LearnedDecoder(std::size_t par_dim, std::size_t hidden, std::size_t color_hidden,
                 ImageShape shape, Rng& init_rng);

  struct TrainResult {
    std::vector<std::vector<double>> codes;  // z_par per training example
    std::vector<double> epoch_rmse;
  };

  // Fits the decoder on `examples` (provenance colors are the z_perp targets).
  static LearnedDecoder train(const std::vector<data::ColoredExample>& examples,
                              const LearnedDecoderOptions& options, Rng& rng,
                              TrainResult* result = nullptr);

  std::size_t par_dim() const override { return par_dim_; }
  std::size_t perp_dim() const override { return 3; }
  ImageShape image_shape() const override { return shape_; }
  ad::Tensor render(const ad::Tensor& z_par, const ad::Tensor& z_perp) const override;
  std::vector<double> sample_perp(Rng& rng) const override;
  std::optional<PerpBox> perp_box() const override;

  // Map stage for z_par: diagonal Gaussian fitted to the training codes.
  std::vector<double> sample_par(Rng& rng) const;

  const std::vector<Color>& color_table() const { return color_table_; }
  double train_rmse() const { return train_rmse_; }
  double jitter_std() const { return jitter_std_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }

  // "ADVMIXD1" checkpoint.
  void save(const std::filesystem::path& path) const;
  static LearnedDecoder load(const std::filesystem::path& path);

 private:
  LearnedDecoder() = default;
  ad::Tensor render_with(const std::vector<ad::Tensor>& p, const ad::Tensor& z_par,
                         const ad::Tensor& z_perp) const;
  void set_color_table(std::vector<Color> table);

  std::size_t par_dim_ = 0;
  std::size_t hidden_ = 0;
  std::size_t color_hidden_ = 0;
  ImageShape shape_{};
  std::vector<ad::Parameter> params_;  // W1 b1 W2 b2 U u V v
  std::vector<double> code_mean_;
  std::vector<double> code_std_;
  double train_rmse_ = 0.0;
  double jitter_std_ = 0.02;
  std::vector<Color> color_table_;
  ColorSampler sampler_ = ColorSampler::uniform_box();
};

// ---------------------------------------------------------------------------

// sqrt(d) - delta d^(1/4) <= ||z||_2 <= sqrt(d) + delta d^(1/4)
bool typical_shell_check(std::span<const double> z, double delta);

struct PerpRegion {
  std::vector<double> center;
  double radius_inf = 0.03;
  std::optional<std::vector<double>> box_lo;
  std::optional<std::vector<double>> box_hi;
  // Also require coordinates to sum to one.
  bool simplex = false;

  void validate() const;
};

// Clip to the l-inf ball around the center, then to the box. In simplex mode
// the Euclidean projection onto {sum = 1} within those bounds is returned.
// Points already inside are returned unchanged.
std::vector<double> project_perp(std::span<const double> z, const PerpRegion& region);

}  // namespace advmix::gen
