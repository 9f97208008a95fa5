#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "advmix/errors.hpp"
#include "advmix/eval.hpp"
#include "advmix/inversion.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace advmix;

namespace {

// Ten-dimensional inputs; the identity weights make one-hot inputs perfectly classified.
model::Classifier identity_classifier() {
  Rng rng(0);
  auto f = model::Classifier::linear(10, 10, rng);
  auto& w = f.parameters()[0].values;
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t k = 0; k < 10; ++k) w[k * 10 + k] = 1.0;
  return f;
}

model::Classifier constant_classifier(std::size_t dim, int cls) {
  Rng rng(0);
  auto f = model::Classifier::linear(dim, 10, rng);
  std::fill(f.parameters()[0].values.begin(), f.parameters()[0].values.end(), 0.0);
  f.parameters()[1].values[static_cast<std::size_t>(cls)] = 1.0;
  return f;
}

// Per-pixel weights shared by all three channels: sees only the gray sum.
model::Classifier color_blind(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  auto f = model::Classifier::linear(dim, 10, rng);
  auto& w = f.parameters()[0].values;
  for (std::size_t p = 0; p < dim / 3; ++p)
    for (std::size_t c = 1; c < 3; ++c)
      for (std::size_t k = 0; k < 10; ++k) w[(p * 3 + c) * 10 + k] = w[(p * 3) * 10 + k];
  return f;
}

// Logit k < 3 is the total intensity of channel k.
model::Classifier color_only(std::size_t dim) {
  Rng rng(0);
  auto f = model::Classifier::linear(dim, 10, rng);
  auto& w = f.parameters()[0].values;
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t p = 0; p < dim / 3; ++p)
    for (std::size_t c = 0; c < 3; ++c) w[(p * 3 + c) * 10 + c] = 1.0;
  return f;
}

}  // namespace

TEST_CASE("clean accuracy") {
  std::vector<double> x;
  std::vector<int> y;
  for (int i = 0; i < 100; ++i) {
    std::vector<double> onehot(10, 0.0);
    onehot[i % 10] = 1.0;
    x.insert(x.end(), onehot.begin(), onehot.end());
    y.push_back(i % 10);
  }
  CHECK(eval::eval_clean(identity_classifier(), x, y) == 1.0);
  CHECK(eval::eval_clean(constant_classifier(10, 4), x, y) == doctest::Approx(0.1));
  const auto per = eval::per_class_accuracy(constant_classifier(10, 4), x, y);
  CHECK(per[4] == 1.0);
  CHECK(per[0] == 0.0);
  CHECK_THROWS_AS(eval::eval_clean(identity_classifier(), {}, {}), DataError);
}

TEST_CASE("perturbed accuracy and the dominance rule") {
  auto bank = testing::glyph_bank(60, 1);
  const auto ex = testing::colored(*bank, data::ColorMode::kUniformRandom, 0.0, 2);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  const auto lat = inv::invert_all(dec, ex);
  const auto set = train::to_image_set(ex);
  const std::size_t dim = dec.image_shape().size();

  // Constant classifier: correct exactly on class 4, and never attackable.
  attack::LatentAttackConfig cfg;
  cfg.restarts = 10;
  const auto f = constant_classifier(dim, 4);
  const auto r = eval::eval_robust(f, dec, lat.latents, lat.labels, set.pixels, cfg);
  CHECK(r.robust_accuracy == r.clean_accuracy);
  CHECK(r.clean_accuracy == doctest::Approx(eval::eval_clean(f, set.pixels, set.labels)));
  for (std::size_t i = 0; i < ex.size(); ++i) {
    if (ex[i].label != 4) CHECK(r.reports[i].image.empty());  // never attacked
  }

  // A color-reliant model: perturbed accuracy never exceeds clean accuracy.
  const auto g = testing::color_reliant_linear(*bank, 2, 3);
  const auto rg = eval::eval_robust(g, dec, lat.latents, lat.labels, set.pixels, cfg);
  CHECK(rg.robust_accuracy <= rg.clean_accuracy);
  CHECK(rg.successes + rg.errors <= rg.attacked);
  if (rg.successes > 0) CHECK(rg.mean_restarts_to_success >= 1.0);
}

TEST_CASE("invariance over a color grid") {
  auto bank = testing::glyph_bank(50, 4);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  std::vector<gen::FactorLatent> z;
  for (std::size_t i = 0; i < bank->size(); ++i) z.push_back({{static_cast<double>(i)}, {0.5, 0.5, 0.5}});
  const std::size_t dim = dec.image_shape().size();
  const auto rgb = eval::rgb_grid();
  CHECK(eval::eval_invariance(color_blind(dim, 5), dec, z, rgb) == 1.0);
  CHECK(eval::eval_invariance(color_only(dim), dec, z, rgb) == 0.0);
  const auto cube = eval::cube_grid(5);
  CHECK(cube.size() == 125);
  CHECK(cube.front() == std::vector<double>{0, 0, 0});
  CHECK(cube.back() == std::vector<double>{1, 1, 1});
  CHECK(eval::eval_invariance(color_only(dim), dec, z, cube) == 0.0);
}

TEST_CASE("report CSV round-trip") {
  std::vector<eval::ReportRow> rows{{"exp/a", "clean_accuracy", 0.1 + 0.2, 7, "00ff00ff00ff00ff"},
                                    {"exp/b", "robust_accuracy", 1.0 / 3.0, 18446744073709551615ull, "0123456789abcdef"},
                                    {"exp/c", "tiny", 5e-324, 0, "x"}};
  const auto path = std::filesystem::temp_directory_path() / "advmix_report.csv";
  eval::write_report_csv(rows, path);
  const auto back = eval::read_report_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].experiment_id == rows[i].experiment_id);
    CHECK(back[i].metric == rows[i].metric);
    CHECK(back[i].value == rows[i].value);
    CHECK(back[i].seed == rows[i].seed);
    CHECK(back[i].config_hash == rows[i].config_hash);
  }
  { std::ofstream(path, std::ios::trunc) << "a,b\n"; }
  CHECK_THROWS_AS(eval::read_report_csv(path), DataError);
  std::filesystem::remove(path);

  eval::EvalReport rep;
  rep.clean_accuracy = 0.9;
  rep.robust_accuracy = 0.5;
  rep.env_risks = {0.1, 0.3};
  rep.env_max = 0.3;
  const auto r = rep.rows("id", 1, "h");
  CHECK(r.front().metric == "dominance_rule");
  CHECK(std::count_if(r.begin(), r.end(), [](const auto& x) { return x.metric == "env_risk_max"; }) == 1);
}

TEST_CASE("PPM output is bit-exact") {
  CHECK(eval::pixel_byte(1.0) == 255);
  CHECK(eval::pixel_byte(0.0) == 0);
  CHECK(eval::pixel_byte(0.5) == 128);
  CHECK(eval::pixel_byte(-0.2) == 0);
  CHECK(eval::pixel_byte(7.0) == 255);

  const std::vector<double> img{0.0, 0.5, 1.0, 0.25, 0.75, 1.0 / 255.0};
  const auto path = std::filesystem::temp_directory_path() / "advmix_test.ppm";
  eval::write_ppm(path, img, 1, 2);
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string expected = std::string("P6\n2 1\n255\n") + std::string{'\x00', '\x80', '\xff', '\x40', '\xbf', '\x01'};
  CHECK(bytes == expected);
  CHECK_THROWS_AS(eval::write_ppm(path, img, 2, 2), std::invalid_argument);

  const auto diff = eval::rescaled_difference(img, img);
  for (double v : diff) CHECK(v == 0.5);
  const std::vector<double> a{0.0, 0.0, 0.0}, b{0.5, 0.0, -0.25};
  CHECK(eval::rescaled_difference(a, b) == std::vector<double>{1.0, 0.5, 0.25});

  eval::write_triplet_ppm(path, img, img, 1, 2);
  CHECK(std::filesystem::file_size(path) == std::string("P6\n6 1\n255\n").size() + 18);
  std::filesystem::remove(path);
}
