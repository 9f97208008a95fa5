#pragma once

// Dataset construction: IDX ingestion, synthetic digit glyphs, colorization
// with a tunable label/color correlation, biased decoder-training subsets and
// the two-cluster toy problem.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advmix/rng.hpp"

namespace advmix::data {

using Color = std::array<double, 3>;

inline constexpr std::size_t kNumClasses = 10;
inline constexpr std::size_t kGlyphSize = 28;
inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kChannels = 3;

struct GrayDataset {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pixels;  // size() * rows * cols, one row-major image after another
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return rows * cols; }
  std::span<const double> image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }
};

// IDX parsing. Images: magic 0x00000803, count, rows, cols, then bytes.
// Labels: magic 0x00000801, count, then bytes. All header ints big-endian.
GrayDataset parse_idx(std::span<const std::uint8_t> image_bytes,
                      std::span<const std::uint8_t> label_bytes);
GrayDataset load_idx(const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path);
// Pixels are stored as round(255 * v).
void write_idx(const GrayDataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

// Centered zero padding to size x size.
GrayDataset pad_to(const GrayDataset& dataset, std::size_t size);

// Stroke-rendered digits (28x28, values on the k/255 lattice) with random
// affine jitter, stroke width and control-point noise. Labels are balanced.
GrayDataset synthesize_digits(std::size_t count, Rng& rng);

// Keeps the first `count` examples.
GrayDataset take(const GrayDataset& dataset, std::size_t count);

// ---------------------------------------------------------------------------
// Colorization

enum class ColorMode { kGaussianPalette, kRgbRestricted, kUniformRandom };

std::string to_string(ColorMode mode);
ColorMode parse_color_mode(const std::string& name);

// Ten fully saturated colors at HSV hues k/10.
std::array<Color, kNumClasses> default_palette();

struct ColorSpec {
  ColorMode mode = ColorMode::kUniformRandom;
  std::array<Color, kNumClasses> means = default_palette();
  double sigma = 0.0;
  std::array<double, 3> rgb_weights{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};

  // Throws ConfigError on weights that are negative or do not sum to one,
  // colors outside [0,1] or negative sigma.
  void validate() const;
};

inline constexpr Color kRed{1.0, 0.0, 0.0};
inline constexpr Color kGreen{0.0, 1.0, 0.0};
inline constexpr Color kBlue{0.0, 0.0, 1.0};

Color draw_color(const ColorSpec& spec, int label, Rng& rng);

struct Provenance {
  std::size_t glyph_index = 0;
  Color color{};
};

struct ColoredExample {
  std::vector<double> image;  // kImageSize^2 * kChannels, pixel-major HWC
  int label = 0;
  std::optional<Provenance> provenance;
};

// `glyphs` must already be padded to kImageSize.
std::vector<ColoredExample> colorize(const GrayDataset& glyphs, const ColorSpec& spec, Rng& rng);

enum class BiasProfile { kUnbiased, kLessBiased, kMoreBiased };

std::string to_string(BiasProfile profile);
BiasProfile parse_bias_profile(const std::string& name);

// Resamples (with replacement, same total count) so that the class mix is
// 90% zeros / 10% uniform over 1-9 (more biased) or 45% zeros / 45% ones /
// 10% uniform over 2-9 (less biased). Unbiased returns the input unchanged.
std::vector<ColoredExample> decoder_bias_subset(const std::vector<ColoredExample>& colored,
                                                BiasProfile profile, Rng& rng);

// "ADVMIXX1" cache: header, count, H, W, C (int32 LE), then per record
// label (int32), color (3 x float64), glyph index (int32), image (float64).
void save_colored(const std::vector<ColoredExample>& examples, const std::filesystem::path& path);
std::vector<ColoredExample> load_colored(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Toy problem

struct ToyPoint {
  double x1 = 0.0;
  double x2 = 0.0;
  int label = 0;
  double z_par = 0.0;   // always 20 * label
  double z_perp = 0.0;  // 0 or 10
};

struct ToyDataset {
  std::vector<ToyPoint> points;
};

ToyDataset make_toy(std::size_t count, Rng& rng);

}  // namespace advmix::data
