#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "advmix/errors.hpp"
#include "advmix/experiment.hpp"
#include "doctest.h"

using namespace advmix;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ADVMIX_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// A pipeline small enough to run in a few seconds.
json tiny_config(const fs::path& out) {
  return json{{"id", "tiny"},
              {"seed", 5},
              {"dataset", {{"train_count", 120}, {"test_count", 40}}},
              {"model", {{"arch", "linear"}, {"hidden", json::array()}}},
              {"regime", {{"name", "advmix"}, {"epochs", 1}, {"batch_size", 32}}},
              {"attack", {{"restarts", 2}, {"steps", 3}}},
              {"eval", {{"restarts", 2}, {"steps", 3}, {"images", 1}}},
              {"output", {{"dir", out.string()}}}};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys and bad types") {
  CHECK_NOTHROW(exp::ExperimentConfig::from_json(json::object()));
  CHECK_THROWS_WITH_AS(exp::ExperimentConfig::from_json(json{{"colour", 1}}), doctest::Contains("colour"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(exp::ExperimentConfig::from_json(json{{"dataset", {{"sigmaa", 0.1}}}}),
                       doctest::Contains("dataset.sigmaa"), ConfigError);
  CHECK_THROWS_AS(exp::ExperimentConfig::from_json(json{{"seed", "five"}}), ConfigError);
  CHECK_THROWS_AS(exp::ExperimentConfig::from_json(json{{"regime", {{"name", "cutmix"}}}}), ConfigError);
  CHECK_THROWS_AS(exp::ExperimentConfig::from_json(json{{"decoder", {{"kind", "gan"}}}}), ConfigError);
  CHECK_THROWS_AS(exp::ExperimentConfig::from_json(json{{"attack", {{"epsilon", -1.0}}}}), ConfigError);
  CHECK_THROWS_AS(exp::ExperimentConfig::from_json(json::array()), ConfigError);
}

TEST_CASE("config round-trips and hashes stably") {
  const auto a = exp::ExperimentConfig::from_json(tiny_config("/tmp/x"));
  const auto b = exp::ExperimentConfig::from_json(a.to_json());
  CHECK(a.to_json() == b.to_json());
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  auto c = a;
  c.seed = 6;
  CHECK(c.hash() != a.hash());
  CHECK(exp::ExperimentConfig{}.hash() == exp::ExperimentConfig{}.hash());
  auto d = a;
  d.output_dir = "/elsewhere";
  CHECK(d.hash() == a.hash());
}

TEST_CASE("presets are valid configs") {
  for (const auto& name : exp::preset_names()) {
    const auto cfg = exp::preset_config(name);
    CHECK_NOTHROW(cfg.validate());
    CHECK(exp::ExperimentConfig::from_json(cfg.to_json()).hash() == cfg.hash());
  }
  CHECK_THROWS_AS(exp::preset_config("fig9"), ConfigError);
}

TEST_CASE("CLI exit codes") {
  const auto dir = fresh_dir("advmix_cli_codes");
  CHECK(run_cli("--bogus") == 2);
  CHECK(run_cli("build-data") == 2);  // --config is required

  const auto bad = dir / "bad.json";
  std::ofstream(bad) << R"({"dataset": {"colour": 1}})";
  CHECK(run_cli("build-data --config " + bad.string()) == 2);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(run_cli("build-data --config " + (dir / "broken.json").string()) == 2);

  // Training without building data first is a missing-artifact error.
  const auto cfg = dir / "tiny.json";
  std::ofstream(cfg) << tiny_config(dir / "run").dump();
  CHECK(run_cli("train --config " + cfg.string()) == 3);

  json mnist = tiny_config(dir / "run");
  mnist["dataset"]["source"] = "mnist";
  mnist["dataset"]["mnist_dir"] = (dir / "nowhere").string();
  std::ofstream(dir / "mnist.json") << mnist.dump();
  CHECK(run_cli("build-data --config " + (dir / "mnist.json").string()) == 3);
  fs::remove_all(dir);
}

TEST_CASE("CLI pipeline end to end is reproducible") {
  const auto dir = fresh_dir("advmix_cli_e2e");
  const auto cfg = dir / "tiny.json";
  std::ofstream(cfg) << tiny_config(dir / "run").dump();
  const std::string c = " --config " + cfg.string();
  auto pipeline = [&](const std::string& out) {
    const std::string o = c + " --out " + (dir / out).string();
    REQUIRE(run_cli("build-data" + o) == 0);
    REQUIRE(run_cli("train-decoder" + o) == 0);
    REQUIRE(run_cli("encode" + o) == 0);
    REQUIRE(run_cli("train" + o) == 0);
    REQUIRE(run_cli("eval" + o) == 0);
  };
  pipeline("a");
  pipeline("b");
  for (const char* f : {"report.csv", "train_log.csv", "config.hash", "latents.advmixl", "model.advmixc"}) {
    CHECK(fs::exists(dir / "a" / f));
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  const auto rows = eval::read_report_csv(dir / "a" / "report.csv");
  REQUIRE_FALSE(rows.empty());
  CHECK(rows.front().config_hash == slurp(dir / "a" / "config.hash").substr(0, 16));

  // A different seed changes the artifacts.
  REQUIRE(run_cli("build-data" + c + " --seed 99 --out " + (dir / "c").string()) == 0);
  CHECK(slurp(dir / "a" / "data" / "train.advmixx") != slurp(dir / "c" / "data" / "train.advmixx"));
  fs::remove_all(dir);
}
