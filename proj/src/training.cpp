#include "advmix/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "advmix/errors.hpp"

namespace advmix::train {

std::string to_string(Regime regime) {
  switch (regime) {
    case Regime::kNominal: return "nominal";
    case Regime::kAt: return "at";
    case Regime::kMixup: return "mixup";
    case Regime::kRandMix: return "randmix";
    case Regime::kAdvMix: return "advmix";
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  for (Regime r : {Regime::kNominal, Regime::kAt, Regime::kMixup, Regime::kRandMix, Regime::kAdvMix})
    if (to_string(r) == name) return r;
  throw ConfigError("unknown regime '" + name + "' (expected nominal, at, mixup, randmix or advmix)");
}

void RegimeConfig::validate() const {
  if (epochs < 1) throw ConfigError("regime: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("regime: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("regime: lr must be > 0");
  if (regime == Regime::kAt) {
    if (!(at_epsilon >= 0.0) || !(at_step_size >= 0.0)) throw ConfigError("regime: at epsilon/step must be >= 0");
  }
  if (regime == Regime::kMixup && !(mixup_alpha > 0.0)) throw ConfigError("regime: mixup alpha must be > 0");
  if (regime == Regime::kAdvMix) attack.validate();
}

ImageSet to_image_set(const std::vector<data::ColoredExample>& examples) {
  ImageSet out;
  if (examples.empty()) return out;
  out.dim = examples[0].image.size();
  out.pixels.reserve(examples.size() * out.dim);
  for (const auto& ex : examples) {
    if (ex.image.size() != out.dim) throw DataError("image set: ragged image sizes");
    out.pixels.insert(out.pixels.end(), ex.image.begin(), ex.image.end());
    out.labels.push_back(ex.label);
  }
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "epoch,split,metric,value\n";
  char buf[64];
  auto row = [&](std::size_t epoch, const char* metric, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << epoch << ",train," << metric << ',' << buf << '\n';
  };
  for (const auto& e : epochs) {
    row(e.epoch, "loss", e.loss);
    row(e.epoch, "accuracy", e.train_accuracy);
    if (e.attack_success_rate >= 0.0) row(e.epoch, "attack_success_rate", e.attack_success_rate);
    row(e.epoch, "skipped", static_cast<double>(e.skipped));
  }
}

double sample_beta(double a, double b, Rng& rng) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  for (;;) {
    const double x = ga(rng);
    const double y = gb(rng);
    if (x + y > 0.0) return x / (x + y);
  }
}

MixupBatch batch_mixup(std::span<const double> x_a, std::span<const int> y_a,
                       std::span<const double> x_b, std::span<const int> y_b, std::size_t dim,
                       std::size_t classes, double alpha, Rng& rng, double fixed_lambda) {
  const std::size_t n = y_a.size();
  if (y_b.size() != n || x_a.size() != n * dim || x_b.size() != n * dim) {
    throw std::invalid_argument("batch_mixup: mismatched batch sizes");
  }
  if (!(alpha > 0.0)) throw ConfigError("batch_mixup: alpha must be > 0");
  MixupBatch out;
  out.x.resize(n * dim);
  out.y_soft.assign(n * classes, 0.0);
  out.lambdas.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = fixed_lambda >= 0.0 ? fixed_lambda : sample_beta(alpha, alpha, rng);
    out.lambdas[i] = lam;
    for (std::size_t k = 0; k < dim; ++k)
      out.x[i * dim + k] = lam * x_a[i * dim + k] + (1.0 - lam) * x_b[i * dim + k];
    out.y_soft[i * classes + static_cast<std::size_t>(y_a[i])] += lam;
    out.y_soft[i * classes + static_cast<std::size_t>(y_b[i])] += 1.0 - lam;
  }
  return out;
}

AugmentedBatch batch_randmix(std::span<const gen::FactorLatent> latents, std::span<const int> labels,
                             const gen::Decoder& dec, Rng& rng) {
  if (latents.size() != labels.size()) throw std::invalid_argument("batch_randmix: count mismatch");
  std::vector<gen::FactorLatent> mixed(latents.begin(), latents.end());
  AugmentedBatch out;
  for (auto& z : mixed) {
    z.z_perp = dec.sample_perp(rng);
    out.z_perp.push_back(z.z_perp);
  }
  out.images = gen::decode_batch(dec, mixed);
  out.labels.assign(labels.begin(), labels.end());
  return out;
}

AugmentedBatch batch_advmix(std::span<const gen::FactorLatent> latents, std::span<const int> labels,
                            const gen::Decoder& dec, const model::Classifier& snapshot,
                            const attack::LatentAttackConfig& cfg,
                            std::span<const std::uint64_t> seeds) {
  const auto reports = attack::latent_pgd_batch(snapshot, dec, latents, labels, cfg, seeds);
  AugmentedBatch out;
  std::string first_error;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    if (r.failed) {
      ++out.skipped;
      if (first_error.empty()) first_error = r.error;
      continue;
    }
    out.images.insert(out.images.end(), r.image.begin(), r.image.end());
    out.labels.push_back(labels[i]);
    out.z_perp.push_back(r.z_perp);
    out.successes += r.success;
  }
  if (static_cast<double>(out.skipped) > 0.01 * static_cast<double>(reports.size())) {
    throw NumericError("batch_advmix: " + std::to_string(out.skipped) + " of " +
                       std::to_string(reports.size()) + " attacks failed (" + first_error + ")");
  }
  return out;
}

namespace {

double accuracy(const model::Classifier& f, std::span<const double> x, std::span<const int> y) {
  const auto pred = f.predict(x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
  return pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace

TrainResult train(const RegimeConfig& cfg, const TrainData& data, model::Classifier init, Rng& rng) {
  cfg.validate();
  const bool latent_mode = uses_decoder(cfg.regime);
  if (latent_mode) {
    if (data.latents == nullptr || data.decoder == nullptr) {
      throw ConfigError("train: regime " + to_string(cfg.regime) + " needs latents and a decoder");
    }
    if (data.latents->size() == 0) throw DataError("train: empty latent dataset");
    if (data.decoder->image_shape().size() != init.input_dim()) {
      throw ConfigError("train: decoder output does not match the classifier input");
    }
  } else {
    if (data.images == nullptr || data.images->size() == 0) throw DataError("train: empty image set");
    if (data.images->dim != init.input_dim()) throw ConfigError("train: image size does not match the classifier input");
  }
  const std::size_t n = latent_mode ? data.latents->size() : data.images->size();
  const std::size_t dim = init.input_dim();
  const std::size_t classes = init.num_classes();

  TrainResult result{std::move(init), {}};
  auto& model = result.model;
  ad::AdamState adam;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t seen = 0, attacked = 0, successes = 0;

    for (std::size_t start = 0, batch = 0; start < n; start += cfg.batch_size, ++batch) {
      const std::size_t bs = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, bs);
      std::vector<double> x;
      std::vector<int> y;
      std::vector<double> soft;

      if (latent_mode) {
        std::vector<gen::FactorLatent> z;
        std::vector<int> labels;
        for (std::size_t i : idx) {
          z.push_back(data.latents->latents[i]);
          labels.push_back(data.latents->labels[i]);
        }
        AugmentedBatch aug;
        if (cfg.regime == Regime::kRandMix) {
          aug = batch_randmix(z, labels, *data.decoder, rng);
        } else {
          const std::uint64_t base = rng();
          std::vector<std::uint64_t> seeds(bs);
          for (std::size_t j = 0; j < bs; ++j) seeds[j] = derive_seed(base, static_cast<std::uint64_t>(j));
          const auto snapshot = model.snapshot();
          aug = batch_advmix(z, labels, *data.decoder, *snapshot, cfg.attack, seeds);
          attacked += bs - aug.skipped;
          successes += aug.successes;
          log.skipped += aug.skipped;
        }
        x = std::move(aug.images);
        y = std::move(aug.labels);
      } else {
        for (std::size_t i : idx) {
          const auto r = data.images->row(i);
          x.insert(x.end(), r.begin(), r.end());
          y.push_back(data.images->labels[i]);
        }
        if (cfg.regime == Regime::kAt) {
          const auto snapshot = model.snapshot();
          x = attack::input_pgd(*snapshot, x, y, cfg.at_epsilon, cfg.at_steps, cfg.at_step_size, rng);
          const auto pred = snapshot->predict(x);
          for (std::size_t j = 0; j < bs; ++j) successes += pred[j] != y[j];
          attacked += bs;
        } else if (cfg.regime == Regime::kMixup) {
          std::vector<std::size_t> perm(bs);
          std::iota(perm.begin(), perm.end(), 0);
          std::shuffle(perm.begin(), perm.end(), rng);
          std::vector<double> xb(bs * dim);
          std::vector<int> yb(bs);
          for (std::size_t j = 0; j < bs; ++j) {
            std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(perm[j] * dim), dim, xb.begin() + static_cast<std::ptrdiff_t>(j * dim));
            yb[j] = y[perm[j]];
          }
          auto mixed = batch_mixup(x, y, xb, yb, dim, classes, cfg.mixup_alpha, rng);
          x = std::move(mixed.x);
          soft = std::move(mixed.y_soft);
        }
      }
      const std::size_t m = y.size();
      if (m == 0) continue;

      ad::Graph g;
      const auto params = model.bind_parameters(g);
      const auto logits = model.forward(g.constant_view({m, dim}, x), &params).logits;
      const auto loss = soft.empty() ? ad::cross_entropy(logits, y) : ad::soft_cross_entropy(logits, soft);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch) + " (" + to_string(cfg.regime) + ")");
      }
      g.backward(loss);
      std::vector<std::vector<double>> grads;
      for (const auto& p : params) grads.emplace_back(p.grad().begin(), p.grad().end());
      ad::adam_step(model.parameters(), grads, adam, cfg.lr);
      loss_sum += lv * static_cast<double>(m);
      seen += m;
    }

    log.loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
    if (data.images != nullptr && data.images->size() > 0) {
      log.train_accuracy = accuracy(model, data.images->pixels, data.images->labels);
    } else {
      log.train_accuracy = accuracy(model, gen::decode_batch(*data.decoder, data.latents->latents),
                                    data.latents->labels);
    }
    if (cfg.regime == Regime::kAdvMix || cfg.regime == Regime::kAt) {
      log.attack_success_rate = attacked > 0 ? static_cast<double>(successes) / static_cast<double>(attacked) : 0.0;
    }
    result.log.epochs.push_back(log);
  }
  return result;
}

}  // namespace advmix::train
