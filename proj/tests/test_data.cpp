#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "advmix/data.hpp"
#include "advmix/errors.hpp"
#include "advmix/generators.hpp"
#include "doctest.h"

using namespace advmix;

namespace {

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
          static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

std::vector<std::uint8_t> idx_images(std::uint32_t magic, std::uint32_t count, std::uint32_t rows,
                                     std::uint32_t cols, const std::vector<std::uint8_t>& pixels) {
  std::vector<std::uint8_t> out;
  for (std::uint32_t v : {magic, count, rows, cols}) {
    const auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> idx_labels(std::uint32_t magic, const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  for (std::uint32_t v : {magic, static_cast<std::uint32_t>(labels.size())}) {
    const auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("advmix_test_" + name);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("idx fixture parses bit-exactly") {
  const auto images = idx_images(0x803, 1, 2, 2, {0, 255, 128, 64});
  const auto labels = idx_labels(0x801, {7});
  const auto ds = data::parse_idx(images, labels);
  REQUIRE(ds.size() == 1);
  CHECK(ds.rows == 2);
  CHECK(ds.cols == 2);
  CHECK(ds.labels[0] == 7);
  CHECK(ds.pixels[0] == 0.0);
  CHECK(ds.pixels[1] == 1.0);
  CHECK(ds.pixels[2] == 128.0 / 255.0);
  CHECK(ds.pixels[3] == 64.0 / 255.0);
  CHECK(ds.pixels[2] == doctest::Approx(0.50196).epsilon(1e-5));
}

TEST_CASE("idx errors name the problem and offset") {
  const auto images = idx_images(0x803, 1, 2, 2, {0, 255, 128, 64});
  const auto labels = idx_labels(0x801, {7});

  const auto wrong = error_of([&] { data::parse_idx(images, idx_labels(0x803, {7})); });
  CHECK(wrong.find("wrong magic") != std::string::npos);
  CHECK(wrong.find("offset 0") != std::string::npos);

  auto short_images = images;
  short_images.pop_back();
  const auto truncated = error_of([&] { data::parse_idx(short_images, labels); });
  CHECK(truncated.find("truncated") != std::string::npos);
  CHECK(truncated.find("offset") != std::string::npos);

  const auto mismatch = error_of([&] { data::parse_idx(images, idx_labels(0x801, {7, 1})); });
  CHECK(mismatch.find("count") != std::string::npos);

  const auto tiny = error_of([&] { data::parse_idx(std::vector<std::uint8_t>{0, 0}, labels); });
  CHECK(tiny.find("truncated") != std::string::npos);
}

TEST_CASE("idx write and load round-trip") {
  Rng rng(5);
  const auto ds = data::synthesize_digits(30, rng);
  const auto dir = scratch_dir("idx");
  data::write_idx(ds, dir / "img.idx", dir / "lbl.idx");
  const auto back = data::load_idx(dir / "img.idx", dir / "lbl.idx");
  CHECK(back.labels == ds.labels);
  CHECK(back.pixels == ds.pixels);  // synthetic pixels sit on the k/255 lattice
  CHECK_THROWS_AS(data::load_idx(dir / "missing.idx", dir / "lbl.idx"), DataError);
}

TEST_CASE("real MNIST training files when available") {
  const char* dir = std::getenv("ADVMIX_MNIST_DIR");
  if (dir == nullptr) {
    MESSAGE("ADVMIX_MNIST_DIR not set; skipping");
    return;
  }
  const std::filesystem::path root(dir);
  const auto ds = data::load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
  CHECK(ds.size() == 60000);
  CHECK(ds.rows == 28);
  // Recount labels straight from the raw label file.
  std::ifstream in(root / "train-labels-idx1-ubyte", std::ios::binary);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::map<int, int> raw_hist, parsed_hist;
  for (std::size_t i = 8; i < raw.size(); ++i) ++raw_hist[static_cast<unsigned char>(raw[i])];
  for (int y : ds.labels) ++parsed_hist[y];
  CHECK(raw_hist == parsed_hist);
}

TEST_CASE("synthetic digits are balanced and on the byte lattice") {
  Rng rng(1);
  const auto ds = data::synthesize_digits(200, rng);
  CHECK(ds.rows == data::kGlyphSize);
  std::map<int, int> hist;
  for (int y : ds.labels) ++hist[y];
  CHECK(hist.size() == 10);
  for (const auto& [y, n] : hist) CHECK(n == 20);
  for (double v : ds.pixels) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(std::round(v * 255.0) == v * 255.0);
  }
  // Digits differ from each other and have ink.
  double ink = 0.0;
  for (double v : ds.image(0)) ink += v;
  CHECK(ink > 20.0);
}

TEST_CASE("padding centers glyphs") {
  data::GrayDataset ds;
  ds.rows = ds.cols = 2;
  ds.pixels = {1, 2, 3, 4};
  ds.labels = {0};
  const auto padded = data::pad_to(ds, 4);
  CHECK(padded.pixels == std::vector<double>{0, 0, 0, 0, 0, 1, 2, 0, 0, 3, 4, 0, 0, 0, 0, 0});
}

TEST_CASE("palette colors are distinct saturated hues") {
  const auto pal = data::default_palette();
  CHECK(pal[0] == data::Color{1.0, 0.0, 0.0});
  for (std::size_t i = 0; i < pal.size(); ++i)
    for (std::size_t j = i + 1; j < pal.size(); ++j) CHECK(pal[i] != pal[j]);
}

TEST_CASE("colorize with zero sigma uses the class mean exactly") {
  Rng rng(2);
  const auto glyphs = data::pad_to(data::synthesize_digits(50, rng), data::kImageSize);
  data::ColorSpec spec;
  spec.mode = data::ColorMode::kGaussianPalette;
  spec.sigma = 0.0;
  const auto colored = data::colorize(glyphs, spec, rng);
  for (const auto& ex : colored) CHECK(ex.provenance->color == spec.means[ex.label]);
}

TEST_CASE("uniform colors average one half per channel") {
  Rng rng(3);
  data::ColorSpec spec;
  spec.mode = data::ColorMode::kUniformRandom;
  std::array<double, 3> sum{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto c = data::draw_color(spec, 0, rng);
    for (int ch = 0; ch < 3; ++ch) sum[ch] += c[ch];
  }
  for (double s : sum) CHECK(std::abs(s / n - 0.5) <= 0.005);
}

TEST_CASE("rgb-restricted weights control the red fraction") {
  Rng rng(4);
  data::ColorSpec spec;
  spec.mode = data::ColorMode::kRgbRestricted;
  spec.rgb_weights = {0.999, 0.0005, 0.0005};
  int red = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) red += data::draw_color(spec, 0, rng) == data::kRed;
  CHECK(std::abs(static_cast<double>(red) / n - 0.999) <= 0.002);
}

TEST_CASE("color spec validation") {
  data::ColorSpec spec;
  spec.rgb_weights = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.rgb_weights = {1.0, 0.0, 0.0};
  spec.sigma = -0.1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(data::parse_color_mode("sepia"), ConfigError);
  CHECK(data::parse_color_mode("rgb_restricted") == data::ColorMode::kRgbRestricted);
}

TEST_CASE("provenance decodes back to the stored image") {
  Rng rng(6);
  auto bank = std::make_shared<data::GrayDataset>(data::pad_to(data::synthesize_digits(1000, rng), data::kImageSize));
  data::ColorSpec spec;
  spec.mode = data::ColorMode::kGaussianPalette;
  spec.sigma = 0.3;
  const auto colored = data::colorize(*bank, spec, rng);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  std::size_t matches = 0;
  for (const auto& ex : colored) {
    const auto& p = *ex.provenance;
    matches += dec.decode({{static_cast<double>(p.glyph_index)}, {p.color[0], p.color[1], p.color[2]}}) == ex.image;
  }
  CHECK(matches == colored.size());
}

TEST_CASE("decoder bias subsets") {
  Rng rng(8);
  const auto glyphs = data::pad_to(data::synthesize_digits(100, rng), data::kImageSize);
  data::ColorSpec spec;
  const auto colored = data::colorize(glyphs, spec, rng);

  const auto same = data::decoder_bias_subset(colored, data::BiasProfile::kUnbiased, rng);
  REQUIRE(same.size() == colored.size());
  for (std::size_t i = 0; i < same.size(); ++i) CHECK(same[i].image == colored[i].image);

  std::vector<data::ColoredExample> big;
  while (big.size() < 50000) big.insert(big.end(), colored.begin(), colored.end());
  big.resize(50000);
  const auto more = data::decoder_bias_subset(big, data::BiasProfile::kMoreBiased, rng);
  CHECK(more.size() == big.size());
  double zeros = 0;
  for (const auto& ex : more) zeros += ex.label == 0;
  CHECK(std::abs(zeros / more.size() - 0.90) <= 0.01);

  const auto less = data::decoder_bias_subset(big, data::BiasProfile::kLessBiased, rng);
  CHECK(less.size() == big.size());
  std::map<int, double> hist;
  for (const auto& ex : less) hist[ex.label] += 1.0 / less.size();
  CHECK(std::abs(hist[0] - 0.45) <= 0.01);
  CHECK(std::abs(hist[1] - 0.45) <= 0.01);
  CHECK(std::abs(hist[5] - 0.1 / 8) <= 0.005);

  CHECK_THROWS_AS(data::decoder_bias_subset({}, data::BiasProfile::kMoreBiased, rng), DataError);
  CHECK(data::parse_bias_profile("more_biased") == data::BiasProfile::kMoreBiased);
  CHECK_THROWS_AS(data::parse_bias_profile("very"), ConfigError);
}

TEST_CASE("colored cache round-trips and rejects damaged files") {
  Rng rng(9);
  const auto glyphs = data::pad_to(data::synthesize_digits(20, rng), data::kImageSize);
  data::ColorSpec spec;
  const auto colored = data::colorize(glyphs, spec, rng);
  const auto path = scratch_dir("cache") / "colored.bin";
  data::save_colored(colored, path);
  const auto back = data::load_colored(path);
  REQUIRE(back.size() == colored.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].image == colored[i].image);
    CHECK(back[i].label == colored[i].label);
    CHECK(back[i].provenance->color == colored[i].provenance->color);
    CHECK(back[i].provenance->glyph_index == colored[i].provenance->glyph_index);
  }
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  const auto msg = error_of([&] { data::load_colored(path); });
  CHECK(msg.find("truncated") != std::string::npos);
  CHECK(msg.find("offset") != std::string::npos);
}

TEST_CASE("toy dataset geometry") {
  Rng rng(10);
  const auto toy = data::make_toy(10000, rng);
  double sum = 0.0;
  int ones = 0;
  for (const auto& p : toy.points) {
    CHECK(p.z_par == 20.0 * p.label);
    CHECK((p.z_perp == 0.0 || p.z_perp == 10.0));
    if (p.label == 1) {
      sum += p.x2;
      ++ones;
    }
  }
  CHECK(std::abs(sum / ones - 20.0) <= 0.3);
  CHECK(data::make_toy(200, rng).points.size() == 200);
  CHECK_THROWS_AS(data::make_toy(0, rng), std::invalid_argument);
}
