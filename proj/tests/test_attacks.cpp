#include <cmath>

#include "advmix/attacks.hpp"
#include "advmix/errors.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace advmix;
using testing::glyph_bank;

namespace {

// Linear model whose logits ignore the input and favor `cls`.
model::Classifier constant_classifier(std::size_t dim, int cls) {
  Rng rng(0);
  auto f = model::Classifier::linear(dim, data::kNumClasses, rng);
  for (auto& v : f.parameters()[0].values) v = 0.0;
  f.parameters()[1].values[static_cast<std::size_t>(cls)] = 5.0;
  return f;
}

attack::LatentAttackConfig wide_config(std::uint64_t seed) {
  attack::LatentAttackConfig cfg;
  cfg.restarts = 5;
  cfg.steps = 10;
  cfg.epsilon = 0.25;
  cfg.alpha = 0.0625;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("constant correct classifier is unattackable") {
  auto bank = glyph_bank(20, 1);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  const auto f = constant_classifier(dec.image_shape().size(), 3);
  attack::LatentAttackConfig cfg;
  cfg.restarts = 4;
  cfg.steps = 7;
  const auto rep = attack::latent_pgd(f, dec, {{2.0}, {0.5, 0.5, 0.5}}, 3, cfg);
  CHECK_FALSE(rep.success);
  CHECK(rep.restarts_used == 4);
  CHECK(rep.steps_used == 28);
  CHECK(rep.loss_trace.size() == 4 * 8);
}

TEST_CASE("an initially misclassified sample succeeds at step zero") {
  auto bank = glyph_bank(20, 1);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  const auto f = constant_classifier(dec.image_shape().size(), 7);
  const auto rep = attack::latent_pgd(f, dec, {{2.0}, {0.5, 0.5, 0.5}}, 3, attack::LatentAttackConfig{});
  CHECK(rep.success);
  CHECK(rep.restarts_used == 1);
  CHECK(rep.steps_used == 0);
  CHECK(f.predict(rep.image)[0] == 7);
}

TEST_CASE("latent attack stays in its restart ball and returns the best visited variant") {
  auto bank = glyph_bank(200, 2);
  const auto f = testing::color_robust_linear(*bank, 3, 11);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  std::size_t successes = 0, failures = 0;
  for (std::uint64_t i = 0; i < 30; ++i) {
    auto cfg = wide_config(100 + i);
    const gen::FactorLatent z{{static_cast<double>(i)}, {0.5, 0.5, 0.5}};
    const int y = bank->labels[i];
    const auto rep = attack::latent_pgd(f, dec, z, y, cfg);

    // The final z_perp lies in the ball of the restart it came from.
    bool in_some_ball = false;
    for (std::size_t r = 0; r < rep.restarts_used; ++r) {
      Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(r)));
      const auto z0 = dec.sample_perp(rng);
      double dist = 0.0;
      for (int d = 0; d < 3; ++d) dist = std::max(dist, std::abs(rep.z_perp[d] - z0[d]));
      in_some_ball = in_some_ball || dist <= cfg.epsilon + 1e-12;
    }
    CHECK(in_some_ball);
    CHECK(dec.decode({z.z_par, rep.z_perp}) == rep.image);
    CHECK(rep.success == (f.predict(rep.image)[0] != y));
    if (rep.success) {
      ++successes;
    } else {
      ++failures;
      CHECK(rep.loss == *std::max_element(rep.loss_trace.begin(), rep.loss_trace.end()));
    }
    const auto again = attack::latent_pgd(f, dec, z, y, cfg);
    CHECK(again.image == rep.image);
    CHECK(again.loss_trace == rep.loss_trace);
  }
  // The fixture is meant to exercise both outcomes.
  CHECK(successes > 0);
  CHECK(failures > 0);
}

TEST_CASE("batched and single attacks agree") {
  auto bank = glyph_bank(50, 3);
  const auto f = testing::color_reliant_linear(*bank, 1, 12);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  const auto cfg = wide_config(9);
  std::vector<gen::FactorLatent> z;
  std::vector<int> y;
  for (std::size_t i = 0; i < 8; ++i) {
    z.push_back({{static_cast<double>(i)}, {0.2, 0.3, 0.4}});
    y.push_back(bank->labels[i]);
  }
  const auto batch = attack::latent_pgd_batch(f, dec, z, y, cfg);
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto single_cfg = cfg;
    single_cfg.seed = attack::example_seed(cfg, i);
    const auto one = attack::latent_pgd(f, dec, z[i], y[i], single_cfg);
    CHECK(one.image == batch[i].image);
    CHECK(one.success == batch[i].success);
    CHECK(one.steps_used == batch[i].steps_used);
  }
}

TEST_CASE("latent attack agrees with the color-lattice oracle") {
  auto bank = glyph_bank(200, 4);
  const auto f = testing::color_reliant_linear(*bank, 2, 13);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  std::size_t agree = 0;
  const std::size_t cases = 40;
  for (std::size_t i = 0; i < cases; ++i) {
    const auto c = testing::grid_oracle(f, dec, {{static_cast<double>(i)}, {0, 0, 0}}, bank->labels[i],
                                        wide_config(500 + i));
    agree += c.attack_success == c.oracle_success;
    CHECK(c.grid_points > 0);
    CHECK(c.oracle_best >= c.attack_loss - c.slack);
  }
  CHECK(static_cast<double>(agree) >= 0.95 * cases);
}

TEST_CASE("attack config validation") {
  attack::LatentAttackConfig cfg;
  cfg.restarts = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.alpha = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("input-space PGD") {
  auto bank = glyph_bank(300, 5);
  const auto f = testing::color_reliant_linear(*bank, 3, 14);
  const auto test = train::to_image_set(testing::colored(*bank, data::ColorMode::kGaussianPalette, 0.0, 99));
  Rng rng(6);
  const auto same = attack::input_pgd(f, test.pixels, test.labels, 0.0, 10, 0.025, rng);
  CHECK(same == test.pixels);

  const auto adv = attack::input_pgd(f, test.pixels, test.labels, 0.1, 10, 0.025, rng);
  for (std::size_t i = 0; i < adv.size(); ++i) {
    CHECK(std::abs(adv[i] - test.pixels[i]) <= 0.1 + 1e-12);
    CHECK(adv[i] >= 0.0);
    CHECK(adv[i] <= 1.0);
  }
  const auto before = attack::row_cross_entropy(f.logit_values(test.pixels), 10, test.labels);
  const auto after = attack::row_cross_entropy(f.logit_values(adv), 10, test.labels);
  std::size_t up = 0;
  for (std::size_t i = 0; i < before.size(); ++i) up += after[i] >= before[i];
  CHECK(static_cast<double>(up) >= 0.9 * static_cast<double>(before.size()));
}

TEST_CASE("environment worst case") {
  auto bank = glyph_bank(30, 7);
  gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  const std::size_t dim = dec.image_shape().size();
  // Predicts class 0 when red dominates the image and class 1 otherwise.
  Rng rng(0);
  auto f = model::Classifier::linear(dim, 2, rng);
  auto& w = f.parameters()[0].values;
  for (std::size_t p = 0; p < dim / 3; ++p) {
    w[(p * 3) * 2 + 0] = 1.0;
    w[(p * 3) * 2 + 1] = -1.0;
    for (std::size_t c = 1; c < 3; ++c) {
      w[(p * 3 + c) * 2 + 0] = -1.0;
      w[(p * 3 + c) * 2 + 1] = 1.0;
    }
  }
  std::vector<gen::FactorLatent> z;
  std::vector<int> y;
  for (std::size_t i = 0; i < bank->size(); ++i) {
    z.push_back({{static_cast<double>(i)}, {1, 0, 0}});
    y.push_back(0);
  }
  const std::vector<std::vector<double>> red{{1, 0, 0}};
  CHECK(attack::environment_worst_case(f, dec, z, y, red).max == 0.0);
  const std::vector<std::vector<double>> both{{1, 0, 0}, {0, 1, 0}};
  const auto r = attack::environment_worst_case(f, dec, z, y, both);
  CHECK(r.risks == std::vector<double>{0.0, 1.0});
  CHECK(r.max == 1.0);
  CHECK(r.max >= r.mean);
  CHECK_THROWS_AS(attack::environment_worst_case(f, dec, z, y, {}), std::invalid_argument);

  Rng pick(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 20; ++t) {
    std::vector<std::vector<double>> envs(4);
    for (auto& e : envs) e = {u(pick), u(pick), u(pick)};
    const auto rr = attack::environment_worst_case(f, dec, z, y, envs);
    CHECK(rr.max >= rr.mean);
  }
}
