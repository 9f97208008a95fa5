#include "advmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "advmix/binary_io.hpp"
#include "advmix/errors.hpp"
#include "advmix/generators.hpp"

namespace advmix::data {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* file) {
  if (offset + 4 > bytes.size()) {
    throw DataError(std::string(file) + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<char>& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

GrayDataset parse_idx(std::span<const std::uint8_t> image_bytes,
                      std::span<const std::uint8_t> label_bytes) {
  const std::uint32_t img_magic = read_be32(image_bytes, 0, "images");
  if (img_magic != kIdxImagesMagic) {
    throw DataError("images: wrong magic 0x" + [&] {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08x", img_magic);
      return std::string(buf);
    }() + " at offset 0, expected 0x00000803");
  }
  const std::uint32_t lbl_magic = read_be32(label_bytes, 0, "labels");
  if (lbl_magic != kIdxLabelsMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", lbl_magic);
    throw DataError(std::string("labels: wrong magic 0x") + buf +
                    " at offset 0, expected 0x00000801");
  }
  const std::size_t count = read_be32(image_bytes, 4, "images");
  const std::size_t rows = read_be32(image_bytes, 8, "images");
  const std::size_t cols = read_be32(image_bytes, 12, "images");
  const std::size_t label_count = read_be32(label_bytes, 4, "labels");
  if (label_count != count) {
    throw DataError("labels: count " + std::to_string(label_count) + " at offset 4 does not match " +
                    std::to_string(count) + " images");
  }
  const std::size_t pixel_bytes = count * rows * cols;
  if (image_bytes.size() < 16 + pixel_bytes) {
    throw DataError("images: truncated pixel data at offset " + std::to_string(image_bytes.size()) +
                    ", expected " + std::to_string(16 + pixel_bytes) + " bytes");
  }
  if (label_bytes.size() < 8 + count) {
    throw DataError("labels: truncated label data at offset " + std::to_string(label_bytes.size()) +
                    ", expected " + std::to_string(8 + count) + " bytes");
  }
  GrayDataset out;
  out.rows = rows;
  out.cols = cols;
  out.pixels.resize(pixel_bytes);
  for (std::size_t i = 0; i < pixel_bytes; ++i) out.pixels[i] = image_bytes[16 + i] / 255.0;
  out.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int y = label_bytes[8 + i];
    if (y >= static_cast<int>(kNumClasses)) {
      throw DataError("labels: label " + std::to_string(y) + " out of range at offset " +
                      std::to_string(8 + i));
    }
    out.labels[i] = y;
  }
  return out;
}

GrayDataset load_idx(const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path) {
  const auto images = slurp(images_path);
  const auto labels = slurp(labels_path);
  try {
    return parse_idx(images, labels);
  } catch (const DataError& e) {
    throw DataError(images_path.string() + " / " + labels_path.string() + ": " + e.what());
  }
}

void write_idx(const GrayDataset& dataset, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  std::vector<char> img;
  put_be32(img, kIdxImagesMagic);
  put_be32(img, static_cast<std::uint32_t>(dataset.size()));
  put_be32(img, static_cast<std::uint32_t>(dataset.rows));
  put_be32(img, static_cast<std::uint32_t>(dataset.cols));
  for (double v : dataset.pixels) {
    img.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  std::vector<char> lbl;
  put_be32(lbl, kIdxLabelsMagic);
  put_be32(lbl, static_cast<std::uint32_t>(dataset.size()));
  for (int y : dataset.labels) lbl.push_back(static_cast<char>(y));
  for (const auto& [path, bytes] : {std::pair{images_path, &img}, std::pair{labels_path, &lbl}}) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out.write(bytes->data(), static_cast<std::streamsize>(bytes->size()));
  }
}

GrayDataset pad_to(const GrayDataset& dataset, std::size_t size) {
  if (size < dataset.rows || size < dataset.cols) {
    throw std::invalid_argument("pad_to: target " + std::to_string(size) + " smaller than " +
                                std::to_string(dataset.rows) + "x" + std::to_string(dataset.cols));
  }
  GrayDataset out;
  out.rows = size;
  out.cols = size;
  out.labels = dataset.labels;
  out.pixels.assign(dataset.size() * size * size, 0.0);
  const std::size_t top = (size - dataset.rows) / 2;
  const std::size_t left = (size - dataset.cols) / 2;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto src = dataset.image(i);
    double* dst = out.pixels.data() + i * size * size;
    for (std::size_t r = 0; r < dataset.rows; ++r)
      for (std::size_t c = 0; c < dataset.cols; ++c)
        dst[(r + top) * size + c + left] = src[r * dataset.cols + c];
  }
  return out;
}

GrayDataset take(const GrayDataset& dataset, std::size_t count) {
  count = std::min(count, dataset.size());
  GrayDataset out;
  out.rows = dataset.rows;
  out.cols = dataset.cols;
  out.labels.assign(dataset.labels.begin(), dataset.labels.begin() + static_cast<std::ptrdiff_t>(count));
  out.pixels.assign(dataset.pixels.begin(),
                    dataset.pixels.begin() + static_cast<std::ptrdiff_t>(count * dataset.image_size()));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic digits

namespace {

struct Point {
  double x, y;
};
using Stroke = std::vector<Point>;

Stroke arc(double cx, double cy, double rx, double ry, double t0, double t1, int steps = 14) {
  Stroke s;
  for (int i = 0; i <= steps; ++i) {
    const double t = t0 + (t1 - t0) * i / steps;
    s.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return s;
}

// Unit-box strokes, y pointing down.
std::vector<Stroke> digit_strokes(int digit) {
  constexpr double pi = std::numbers::pi;
  switch (digit) {
    case 0: return {arc(0.5, 0.5, 0.27, 0.38, 0.0, 2.0 * pi, 20)};
    case 1: return {{{0.36, 0.24}, {0.52, 0.1}, {0.52, 0.9}}};
    case 2: {
      Stroke s = arc(0.5, 0.32, 0.24, 0.2, pi, 2.3 * pi);
      s.push_back({0.25, 0.9});
      s.push_back({0.78, 0.9});
      return {s};
    }
    case 3:
      return {arc(0.5, 0.3, 0.22, 0.18, 1.1 * pi, 2.5 * pi),
              arc(0.5, 0.69, 0.25, 0.21, 1.5 * pi, 2.9 * pi)};
    case 4: return {{{0.62, 0.9}, {0.62, 0.1}, {0.2, 0.62}, {0.8, 0.62}}};
    case 5: {
      Stroke s{{0.74, 0.12}, {0.34, 0.12}, {0.3, 0.47}};
      Stroke bowl = arc(0.5, 0.65, 0.25, 0.24, 1.2 * pi, 2.85 * pi);
      s.insert(s.end(), bowl.begin(), bowl.end());
      return {s};
    }
    case 6:
      return {{{0.68, 0.1}, {0.47, 0.28}, {0.34, 0.5}, {0.3, 0.7}},
              arc(0.5, 0.7, 0.2, 0.19, 0.0, 2.0 * pi, 18)};
    case 7: return {{{0.22, 0.12}, {0.78, 0.12}, {0.42, 0.9}}};
    case 8:
      return {arc(0.5, 0.3, 0.19, 0.17, 0.0, 2.0 * pi, 16),
              arc(0.5, 0.7, 0.23, 0.2, 0.0, 2.0 * pi, 18)};
    default:
      return {arc(0.5, 0.32, 0.21, 0.19, 0.0, 2.0 * pi, 16), {{0.71, 0.32}, {0.66, 0.9}}};
  }
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

GrayDataset synthesize_digits(std::size_t count, Rng& rng) {
  GrayDataset out;
  out.rows = kGlyphSize;
  out.cols = kGlyphSize;
  out.pixels.assign(count * kGlyphSize * kGlyphSize, 0.0);
  out.labels.resize(count);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double pi = std::numbers::pi;
  const double center = kGlyphSize / 2.0;
  for (std::size_t i = 0; i < count; ++i) {
    const int digit = static_cast<int>(i % kNumClasses);
    out.labels[i] = digit;
    const double angle = (unit(rng) - 0.5) * 2.0 * (12.0 * pi / 180.0);
    const double scale = 0.85 + 0.25 * unit(rng);
    const double shear = (unit(rng) - 0.5) * 0.4;
    const double tx = (unit(rng) - 0.5) * 4.0;
    const double ty = (unit(rng) - 0.5) * 4.0;
    const double width = 1.3 + 1.0 * unit(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);

    std::vector<Stroke> strokes = digit_strokes(digit);
    for (auto& stroke : strokes) {
      for (auto& p : stroke) {
        const double jx = p.x + 0.025 * normal(rng);
        const double jy = p.y + 0.025 * normal(rng);
        // unit box -> centered 20x20 pixel box, then shear/rotate/scale/translate
        double x = (jx - 0.5) * 20.0;
        double y = (jy - 0.5) * 20.0;
        x += shear * y;
        const double rx = scale * (ca * x - sa * y);
        const double ry = scale * (sa * x + ca * y);
        p = {rx + center + tx, ry + center + ty};
      }
    }
    double* img = out.pixels.data() + i * kGlyphSize * kGlyphSize;
    for (std::size_t r = 0; r < kGlyphSize; ++r) {
      for (std::size_t c = 0; c < kGlyphSize; ++c) {
        const Point p{c + 0.5, r + 0.5};
        double d = 1e9;
        for (const auto& stroke : strokes)
          for (std::size_t k = 0; k + 1 < stroke.size(); ++k)
            d = std::min(d, segment_distance(p, stroke[k], stroke[k + 1]));
        img[r * kGlyphSize + c] = quantize(width / 2.0 + 0.5 - d);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Colorization

std::string to_string(ColorMode mode) {
  switch (mode) {
    case ColorMode::kGaussianPalette: return "gaussian_palette";
    case ColorMode::kRgbRestricted: return "rgb_restricted";
    case ColorMode::kUniformRandom: return "uniform_random";
  }
  return "?";
}

ColorMode parse_color_mode(const std::string& name) {
  if (name == "gaussian_palette") return ColorMode::kGaussianPalette;
  if (name == "rgb_restricted") return ColorMode::kRgbRestricted;
  if (name == "uniform_random") return ColorMode::kUniformRandom;
  throw ConfigError("unknown color mode '" + name +
                    "' (expected gaussian_palette, rgb_restricted or uniform_random)");
}

std::array<Color, kNumClasses> default_palette() {
  std::array<Color, kNumClasses> palette{};
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const double h6 = 6.0 * static_cast<double>(k) / kNumClasses;
    const int sector = static_cast<int>(std::floor(h6)) % 6;
    const double f = h6 - std::floor(h6);
    const double q = 1.0 - f;
    Color c{};
    switch (sector) {
      case 0: c = {1.0, f, 0.0}; break;
      case 1: c = {q, 1.0, 0.0}; break;
      case 2: c = {0.0, 1.0, f}; break;
      case 3: c = {0.0, q, 1.0}; break;
      case 4: c = {f, 0.0, 1.0}; break;
      default: c = {1.0, 0.0, q}; break;
    }
    palette[k] = c;
  }
  return palette;
}

void ColorSpec::validate() const {
  if (!(sigma >= 0.0)) throw ConfigError("color sigma must be >= 0, got " + std::to_string(sigma));
  double total = 0.0;
  for (double w : rgb_weights) {
    if (!(w >= 0.0)) throw ConfigError("rgb_weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("rgb_weights must sum to 1, got " + std::to_string(total));
  }
  for (const auto& mu : means)
    for (double v : mu)
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("palette colors must lie in [0,1]^3");
}

Color draw_color(const ColorSpec& spec, int label, Rng& rng) {
  switch (spec.mode) {
    case ColorMode::kGaussianPalette: {
      std::normal_distribution<double> normal(0.0, 1.0);
      const Color& mu = spec.means.at(static_cast<std::size_t>(label));
      Color c{};
      for (std::size_t ch = 0; ch < 3; ++ch) c[ch] = std::clamp(mu[ch] + spec.sigma * normal(rng), 0.0, 1.0);
      return c;
    }
    case ColorMode::kRgbRestricted: {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      if (u < spec.rgb_weights[0]) return kRed;
      if (u < spec.rgb_weights[0] + spec.rgb_weights[1]) return kGreen;
      return kBlue;
    }
    case ColorMode::kUniformRandom: {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      Color c{};
      for (auto& v : c) v = unit(rng);
      return c;
    }
  }
  return {};
}

std::vector<ColoredExample> colorize(const GrayDataset& glyphs, const ColorSpec& spec, Rng& rng) {
  spec.validate();
  if (glyphs.rows != kImageSize || glyphs.cols != kImageSize) {
    throw std::invalid_argument("colorize: glyphs must be padded to " + std::to_string(kImageSize) +
                                "x" + std::to_string(kImageSize));
  }
  std::vector<ColoredExample> out;
  out.reserve(glyphs.size());
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    ColoredExample ex;
    ex.label = glyphs.labels[i];
    const Color color = draw_color(spec, ex.label, rng);
    ex.image = gen::ProceduralGlyphDecoder::render_pixels(glyphs.image(i), color);
    ex.provenance = Provenance{i, color};
    out.push_back(std::move(ex));
  }
  return out;
}

std::string to_string(BiasProfile profile) {
  switch (profile) {
    case BiasProfile::kUnbiased: return "unbiased";
    case BiasProfile::kLessBiased: return "less_biased";
    case BiasProfile::kMoreBiased: return "more_biased";
  }
  return "?";
}

BiasProfile parse_bias_profile(const std::string& name) {
  if (name == "unbiased") return BiasProfile::kUnbiased;
  if (name == "less_biased") return BiasProfile::kLessBiased;
  if (name == "more_biased") return BiasProfile::kMoreBiased;
  throw ConfigError("unknown bias profile '" + name +
                    "' (expected unbiased, less_biased or more_biased)");
}

std::vector<ColoredExample> decoder_bias_subset(const std::vector<ColoredExample>& colored,
                                                BiasProfile profile, Rng& rng) {
  if (colored.empty()) throw DataError("decoder_bias_subset: empty input");
  if (profile == BiasProfile::kUnbiased) return colored;

  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  for (std::size_t i = 0; i < colored.size(); ++i)
    by_class.at(static_cast<std::size_t>(colored[i].label)).push_back(i);

  // (class set, probability mass) blocks
  std::vector<std::pair<std::vector<int>, double>> blocks;
  if (profile == BiasProfile::kMoreBiased) {
    blocks = {{{0}, 0.9}, {{1, 2, 3, 4, 5, 6, 7, 8, 9}, 0.1}};
  } else {
    blocks = {{{0}, 0.45}, {{1}, 0.45}, {{2, 3, 4, 5, 6, 7, 8, 9}, 0.1}};
  }
  for (const auto& [classes, mass] : blocks)
    for (int c : classes)
      if (by_class[static_cast<std::size_t>(c)].empty()) {
        throw DataError("decoder_bias_subset: no examples of class " + std::to_string(c) +
                        " for profile " + to_string(profile));
      }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<ColoredExample> out;
  out.reserve(colored.size());
  for (std::size_t n = 0; n < colored.size(); ++n) {
    double u = unit(rng);
    std::size_t b = 0;
    while (b + 1 < blocks.size() && u >= blocks[b].second) {
      u -= blocks[b].second;
      ++b;
    }
    const auto& classes = blocks[b].first;
    const int cls = classes[std::uniform_int_distribution<std::size_t>(0, classes.size() - 1)(rng)];
    const auto& pool = by_class[static_cast<std::size_t>(cls)];
    out.push_back(colored[pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]]);
  }
  return out;
}

void save_colored(const std::vector<ColoredExample>& examples, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("ADVMIXX1");
  w.i32(io::checked_i32(examples.size(), "count"));
  w.i32(static_cast<std::int32_t>(kImageSize));
  w.i32(static_cast<std::int32_t>(kImageSize));
  w.i32(static_cast<std::int32_t>(kChannels));
  const std::size_t pixels = kImageSize * kImageSize * kChannels;
  for (const auto& ex : examples) {
    if (!ex.provenance) throw DataError("save_colored: example without provenance");
    if (ex.image.size() != pixels) throw DataError("save_colored: image has wrong size");
    w.i32(ex.label);
    for (double v : ex.provenance->color) w.f64(v);
    w.i32(io::checked_i32(ex.provenance->glyph_index, "glyph index"));
    w.f64s(ex.image);
  }
  w.write_file(path);
}

std::vector<ColoredExample> load_colored(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("ADVMIXX1");
  const auto count = r.i32("count");
  const auto h = r.i32("height");
  const auto wd = r.i32("width");
  const auto c = r.i32("channels");
  if (count < 0 || h <= 0 || wd <= 0 || c <= 0) {
    throw DataError(path.string() + ": invalid header dimensions");
  }
  const std::size_t pixels = static_cast<std::size_t>(h) * static_cast<std::size_t>(wd) * static_cast<std::size_t>(c);
  std::vector<ColoredExample> out(static_cast<std::size_t>(count));
  for (auto& ex : out) {
    ex.label = r.i32("label");
    Provenance p;
    for (auto& v : p.color) v = r.f64("color");
    const auto glyph = r.i32("glyph index");
    if (glyph < 0) throw DataError(path.string() + ": negative glyph index at offset " + std::to_string(r.offset()));
    p.glyph_index = static_cast<std::size_t>(glyph);
    ex.provenance = p;
    ex.image = r.f64s(pixels, "image");
  }
  r.expect_end();
  return out;
}

// ---------------------------------------------------------------------------

ToyDataset make_toy(std::size_t count, Rng& rng) {
  if (count == 0) throw std::invalid_argument("make_toy: count must be >= 1");
  ToyDataset out;
  out.points.reserve(count);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    ToyPoint p;
    p.label = coin(rng) ? 1 : 0;
    p.z_par = 20.0 * p.label;
    p.z_perp = coin(rng) ? 10.0 : 0.0;
    p.x1 = p.z_perp + gen::kToyX1Std * normal(rng);
    p.x2 = p.z_par + gen::kToyX2Std * normal(rng);
    out.points.push_back(p);
  }
  return out;
}

}  // namespace advmix::data
