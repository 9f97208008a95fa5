#include <cmath>
#include <filesystem>
#include <fstream>

#include "advmix/classifier.hpp"
#include "advmix/errors.hpp"
#include "doctest.h"

using namespace advmix;

TEST_CASE("classifier shapes and activations") {
  Rng rng(3);
  auto lin = model::Classifier::linear(12, 4, rng);
  auto mlp = model::Classifier::mlp2(12, 4, rng, 8, 5);
  CHECK(lin.parameters().size() == 2);
  CHECK(mlp.parameters().size() == 6);
  CHECK(mlp.parameters()[2].shape == ad::Shape{8, 5});

  std::vector<double> x(3 * 12);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : x) v = u(rng);
  ad::Graph g;
  const auto fw = mlp.forward(g.constant({3, 12}, x));
  REQUIRE(fw.activations.size() == 3);
  CHECK(fw.activations[0].shape() == ad::Shape{3, 8});
  CHECK(fw.activations[1].shape() == ad::Shape{3, 5});
  for (double v : fw.activations[0].data()) CHECK(v >= 0.0);
  CHECK(fw.logits.shape() == ad::Shape{3, 4});

  const auto logits = mlp.logit_values(x);
  const auto pred = mlp.predict(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto* row = logits.data() + i * 4;
    CHECK(pred[i] == std::max_element(row, row + 4) - row);
  }
  CHECK(model::parse_arch("mlp2") == model::Arch::kMlp2);
  CHECK_THROWS_AS(model::parse_arch("vgg"), ConfigError);
  CHECK_THROWS_AS(model::Classifier(model::Arch::kLinear, 4, 2, {3}, rng), ConfigError);
  CHECK_THROWS_AS(mlp.predict(std::vector<double>(13)), std::invalid_argument);
}

TEST_CASE("snapshots are independent copies") {
  Rng rng(4);
  auto f = model::Classifier::linear(3, 2, rng);
  const auto snap = f.snapshot();
  const auto before = snap->parameters()[0].values;
  for (auto& v : f.parameters()[0].values) v += 1.0;
  CHECK(snap->parameters()[0].values == before);
}

TEST_CASE("classifier checkpoint round-trip") {
  Rng rng(5);
  const auto f = model::Classifier::mlp2(10, 3, rng, 6, 4);
  const auto path = std::filesystem::temp_directory_path() / "advmix_test_model.advmixc";
  f.save(path);
  const auto g = model::Classifier::load(path);
  CHECK(g.arch() == model::Arch::kMlp2);
  CHECK(g.hidden() == std::vector<std::size_t>{6, 4});
  for (std::size_t i = 0; i < f.parameters().size(); ++i) CHECK(g.parameters()[i].values == f.parameters()[i].values);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(model::Classifier::load(path), DataError);
  { std::ofstream(path, std::ios::trunc) << "ADVMIXD1"; }
  CHECK_THROWS_AS(model::Classifier::load(path), DataError);
  std::filesystem::remove(path);
}
