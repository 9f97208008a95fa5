// advmix command-line front end.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "advmix/errors.hpp"
#include "advmix/experiment.hpp"

namespace fs = std::filesystem;
using namespace advmix;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("--config", c.config, "experiment config (JSON)");
  if (config_required) opt->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory (overrides output.dir)");
  cmd->add_option("--seed", c.seed, "base seed (overrides seed)");
}

exp::ExperimentConfig resolve(const Common& c, exp::ExperimentConfig cfg) {
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output_dir = c.out;
  cfg.validate();
  return cfg;
}

const auto g_start = std::chrono::steady_clock::now();

void note(const std::string& msg) {
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - g_start).count();
  std::fprintf(stderr, "[advmix %7.1fs] %s\n", secs, msg.c_str());
}

void announce(const exp::ExperimentConfig& cfg) {
  note("config " + cfg.id + " hash " + cfg.hash() + " -> " + cfg.output_dir);
  exp::echo_config(cfg, cfg.output_dir);
}

fs::path data_dir(const exp::ExperimentConfig& cfg) { return fs::path(cfg.output_dir) / "data"; }

void require(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) throw DataError("missing '" + p.string() + "'; run `advmix " + producer + "` with the same config first");
}

void cmd_build_data(const exp::ExperimentConfig& cfg) {
  announce(cfg);
  const auto bundle = exp::build_data(cfg);
  exp::save_data(bundle, data_dir(cfg));
  note("wrote " + std::to_string(bundle.train.size()) + " train and " + std::to_string(bundle.test.size()) +
       " test images to " + data_dir(cfg).string());
}

void cmd_train_decoder(const exp::ExperimentConfig& cfg) {
  announce(cfg);
  if (cfg.decoder.kind != "learned") {
    note("decoder.kind is procedural; it has no parameters to fit");
    return;
  }
  const auto bundle = exp::load_data(data_dir(cfg));
  const auto dec = exp::train_decoder(cfg, bundle);
  dec.save(fs::path(cfg.output_dir) / "decoder.advmixd");
  note("decoder train RMSE " + std::to_string(dec.train_rmse()) + ", " +
       std::to_string(dec.color_table().size()) + " recorded colors");
}

void cmd_encode(const exp::ExperimentConfig& cfg) {
  announce(cfg);
  const auto bundle = exp::load_data(data_dir(cfg));
  const fs::path out = fs::path(cfg.output_dir) / "latents.advmixl";
  if (cfg.decoder.kind == "procedural") {
    const gen::ProceduralGlyphDecoder dec(bundle.train_glyphs, gen::ColorSampler::uniform_box());
    inv::save_latents(inv::invert_all(dec, bundle.train), out);
  } else {
    const fs::path dpath = fs::path(cfg.output_dir) / "decoder.advmixd";
    require(dpath, "train-decoder");
    const auto dec = gen::LearnedDecoder::load(dpath);
    const auto net = exp::train_feature_net(cfg, bundle);
    net.classifier().save(fs::path(cfg.output_dir) / "features.advmixc");
    inv::save_latents(exp::encode_training_set(cfg, dec, net, bundle), out);
  }
  note("wrote " + out.string());
}

void cmd_train(const exp::ExperimentConfig& cfg) {
  announce(cfg);
  const auto bundle = exp::load_data(data_dir(cfg));
  std::unique_ptr<gen::Decoder> dec;
  std::optional<inv::LatentDataset> latents;
  if (train::uses_decoder(cfg.regime.regime)) {
    const fs::path lpath = fs::path(cfg.output_dir) / "latents.advmixl";
    require(lpath, "encode");
    latents = inv::load_latents(lpath);
    if (cfg.decoder.kind == "procedural") {
      dec = std::make_unique<gen::ProceduralGlyphDecoder>(bundle.train_glyphs,
                                                          exp::make_sampler(cfg.decoder.sampler, bundle.train));
    } else {
      const fs::path dpath = fs::path(cfg.output_dir) / "decoder.advmixd";
      require(dpath, "train-decoder");
      dec = std::make_unique<gen::LearnedDecoder>(gen::LearnedDecoder::load(dpath));
    }
  }
  const auto result = exp::train_classifier(cfg, bundle, dec.get(), latents ? &*latents : nullptr);
  result.model.save(fs::path(cfg.output_dir) / "model.advmixc");
  result.log.write_csv(fs::path(cfg.output_dir) / "train_log.csv");
  const auto& last = result.log.epochs.back();
  note("final epoch loss " + std::to_string(last.loss) + ", train accuracy " + std::to_string(last.train_accuracy));
}

void cmd_eval(const exp::ExperimentConfig& cfg) {
  announce(cfg);
  const auto bundle = exp::load_data(data_dir(cfg));
  const fs::path mpath = fs::path(cfg.output_dir) / "model.advmixc";
  require(mpath, "train");
  const auto f = model::Classifier::load(mpath);
  const auto ev = exp::evaluate(cfg, f, bundle);
  auto rows = ev.report.rows(cfg.id, cfg.seed, cfg.hash());
  if (cfg.eval.robust) rows.push_back({cfg.id, "robust_subset_clean_accuracy", ev.robust.clean_accuracy, cfg.seed, cfg.hash()});
  eval::write_report_csv(rows, fs::path(cfg.output_dir) / "report.csv");

  // Original, attack variant and rescaled difference for the first few attacked examples.
  std::size_t written = 0;
  for (std::size_t i = 0; i < ev.robust.reports.size() && written < cfg.eval.images; ++i) {
    const auto& r = ev.robust.reports[i];
    if (r.image.empty()) continue;
    const auto name = "variant_" + std::to_string(i) + (r.success ? "_flipped" : "_held") + ".ppm";
    eval::write_triplet_ppm(fs::path(cfg.output_dir) / "images" / name, bundle.test[i].image, r.image,
                            data::kImageSize, data::kImageSize);
    ++written;
  }
  note("clean " + std::to_string(ev.report.clean_accuracy) + ", perturbed " +
       std::to_string(ev.report.robust_accuracy) + ", invariance " + std::to_string(ev.report.invariance_rate));
}

void cmd_reproduce(const std::string& preset, const Common& c) {
  auto base = c.config.empty() ? exp::preset_config(preset) : exp::load_config(c.config);
  if (c.out.empty() && c.config.empty()) base.output_dir = "out/" + preset;
  base = resolve(c, base);
  note("preset " + preset + " hash " + base.hash() + " -> " + base.output_dir);
  const auto result = exp::run_preset(preset, base, base.output_dir, note);
  note("wrote " + (fs::path(base.output_dir) / (preset + ".csv")).string() + " (" +
       std::to_string(result.rows.size()) + " rows)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AdvMix experiments: disentangled decoders, latent attacks and training regimes"};
  app.require_subcommand(1);

  Common c;
  auto* build = app.add_subcommand("build-data", "synthesize or ingest digits, colorize, cache");
  auto* tdec = app.add_subcommand("train-decoder", "fit the learned decoder on the (biased) training subset");
  auto* enc = app.add_subcommand("encode", "invert the training set into labelled latents");
  auto* trn = app.add_subcommand("train", "train a classifier under the configured regime");
  auto* evl = app.add_subcommand("eval", "clean, perturbed and invariance metrics plus variant images");
  for (auto* cmd : {build, tdec, enc, trn, evl}) add_common(cmd, c, true);

  std::string preset;
  auto* rep = app.add_subcommand("reproduce", "run a preset across all regimes and emit one comparison CSV");
  rep->add_option("preset", preset, "preset name")->required()->check(CLI::IsMember(exp::preset_names()));
  add_common(rep, c, false);

  std::string show;
  auto* pc = app.add_subcommand("preset-config", "print a preset's configuration as JSON");
  pc->add_option("preset", show, "preset name")->required()->check(CLI::IsMember(exp::preset_names()));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (pc->parsed()) {
      std::cout << exp::preset_config(show).to_json().dump(2) << '\n';
      return 0;
    }
    if (rep->parsed()) {
      cmd_reproduce(preset, c);
      return 0;
    }
    const auto cfg = resolve(c, exp::load_config(c.config));
    if (build->parsed()) cmd_build_data(cfg);
    else if (tdec->parsed()) cmd_train_decoder(cfg);
    else if (enc->parsed()) cmd_encode(cfg);
    else if (trn->parsed()) cmd_train(cfg);
    else if (evl->parsed()) cmd_eval(cfg);
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
