#include "advmix/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advmix/errors.hpp"

namespace advmix::attack {

void LatentAttackConfig::validate() const {
  if (restarts < 1) throw ConfigError("attack: restarts (N_r) must be >= 1");
  if (steps < 1) throw ConfigError("attack: steps (K) must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("attack: alpha must be > 0");
  if (!(epsilon > 0.0)) throw ConfigError("attack: epsilon must be > 0");
}

std::vector<double> row_cross_entropy(std::span<const double> logits, std::size_t classes,
                                      std::span<const int> labels) {
  std::vector<double> out(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const double* z = logits.data() + b * classes;
    const double mx = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - mx);
    out[b] = mx + std::log(s) - z[labels[b]];
  }
  return out;
}

gen::PerpRegion restart_region(const gen::Decoder& dec, std::span<const double> z0,
                               const LatentAttackConfig& cfg) {
  gen::PerpRegion region;
  region.center.assign(z0.begin(), z0.end());
  region.radius_inf = cfg.epsilon;
  if (const auto box = dec.perp_box()) {
    region.box_lo = box->first;
    region.box_hi = box->second;
  }
  region.simplex = cfg.simplex;
  region.validate();
  return region;
}

namespace {

int argmax_row(const double* z, std::size_t classes) {
  return static_cast<int>(std::max_element(z, z + classes) - z);
}

struct ExampleState {
  AttackReport report;
  double best_loss = -std::numeric_limits<double>::infinity();
  bool finished = false;
};

struct Row {
  std::size_t example;
  gen::PerpRegion region;
  std::vector<double> z;
};

}  // namespace

std::vector<AttackReport> latent_pgd_batch(const model::Classifier& f, const gen::Decoder& dec,
                                           std::span<const gen::FactorLatent> latents,
                                           std::span<const int> labels,
                                           const LatentAttackConfig& cfg,
                                           std::span<const std::uint64_t> seeds) {
  cfg.validate();
  if (latents.size() != labels.size() || seeds.size() != labels.size()) {
    throw std::invalid_argument("latent_pgd: " + std::to_string(latents.size()) + " latents, " +
                                std::to_string(labels.size()) + " labels, " +
                                std::to_string(seeds.size()) + " seeds");
  }
  for (const auto& z : latents) dec.check(z);
  const std::size_t dp = dec.par_dim(), dq = dec.perp_dim();
  const std::size_t pixels = dec.image_shape().size();
  const std::size_t classes = f.num_classes();

  std::vector<ExampleState> state(latents.size());
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    std::vector<Row> rows;
    for (std::size_t i = 0; i < latents.size(); ++i) {
      if (state[i].finished) continue;
      Rng rng(derive_seed(seeds[i], static_cast<std::uint64_t>(r)));
      const auto z0 = dec.sample_perp(rng);
      auto region = restart_region(dec, z0, cfg);
      auto z = gen::project_perp(z0, region);
      rows.push_back({i, std::move(region), std::move(z)});
      state[i].report.restarts_used = r + 1;
    }
    if (rows.empty()) break;

    for (std::size_t k = 0; k <= cfg.steps && !rows.empty(); ++k) {
      const std::size_t n = rows.size();
      std::vector<double> zp, zq;
      std::vector<int> y(n);
      zp.reserve(n * dp);
      zq.reserve(n * dq);
      for (std::size_t j = 0; j < n; ++j) {
        const auto& lat = latents[rows[j].example];
        zp.insert(zp.end(), lat.z_par.begin(), lat.z_par.end());
        zq.insert(zq.end(), rows[j].z.begin(), rows[j].z.end());
        y[j] = labels[rows[j].example];
      }
      ad::Graph g;
      const auto zq_t = g.variable({n, dq}, std::move(zq));
      const auto img = dec.render(g.constant({n, dp}, std::move(zp)), zq_t);
      const auto logits = f.logits(img);
      const auto ce = row_cross_entropy(logits.data(), classes, y);

      std::vector<bool> keep(n, true);
      for (std::size_t j = 0; j < n; ++j) {
        auto& st = state[rows[j].example];
        auto& rep = st.report;
        rep.loss_trace.push_back(ce[j]);
        const auto row_img = img.data().subspan(j * pixels, pixels);
        if (!std::isfinite(ce[j])) {
          keep[j] = false;
          continue;
        }
        const bool flipped = argmax_row(logits.data().data() + j * classes, classes) != y[j];
        if (flipped || ce[j] > st.best_loss) {
          st.best_loss = ce[j];
          rep.loss = ce[j];
          rep.image.assign(row_img.begin(), row_img.end());
          rep.z_perp = rows[j].z;
        }
        if (flipped) {
          rep.success = true;
          st.finished = true;
          keep[j] = false;
        }
      }
      if (k == cfg.steps) break;

      g.backward(ad::cross_entropy(logits, y, ad::Reduction::kSum));
      const auto grad = zq_t.grad();
      std::vector<Row> next;
      next.reserve(n);
      for (std::size_t j = 0; j < n; ++j) {
        if (!keep[j]) continue;
        bool finite = true;
        for (std::size_t d = 0; d < dq; ++d) finite = finite && std::isfinite(grad[j * dq + d]);
        if (!finite) continue;
        auto& row = rows[j];
        std::vector<double> stepped(dq);
        for (std::size_t d = 0; d < dq; ++d) stepped[d] = row.z[d] + cfg.alpha * grad[j * dq + d];
        row.z = gen::project_perp(stepped, row.region);
        ++state[row.example].report.steps_used;
        next.push_back(std::move(row));
      }
      rows = std::move(next);
    }
  }

  std::vector<AttackReport> out;
  out.reserve(state.size());
  for (auto& st : state) {
    if (st.report.image.empty()) {
      st.report.failed = true;
      st.report.error = "every restart produced a non-finite loss or gradient";
    }
    out.push_back(std::move(st.report));
  }
  return out;
}

std::vector<AttackReport> latent_pgd_batch(const model::Classifier& f, const gen::Decoder& dec,
                                           std::span<const gen::FactorLatent> latents,
                                           std::span<const int> labels,
                                           const LatentAttackConfig& cfg) {
  std::vector<std::uint64_t> seeds(labels.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = example_seed(cfg, i);
  return latent_pgd_batch(f, dec, latents, labels, cfg, seeds);
}

AttackReport latent_pgd(const model::Classifier& f, const gen::Decoder& dec,
                        const gen::FactorLatent& z, int y, const LatentAttackConfig& cfg) {
  const std::uint64_t seed = cfg.seed;
  auto reports = latent_pgd_batch(f, dec, std::span<const gen::FactorLatent>(&z, 1),
                                  std::span<const int>(&y, 1), cfg,
                                  std::span<const std::uint64_t>(&seed, 1));
  if (reports[0].failed) throw NumericError("latent_pgd: " + reports[0].error);
  return std::move(reports[0]);
}

std::vector<double> input_pgd(const model::Classifier& f, std::span<const double> x,
                              std::span<const int> labels, double epsilon, std::size_t steps,
                              double step_size, Rng& rng) {
  const std::size_t dim = f.input_dim();
  if (x.size() != labels.size() * dim) {
    throw std::invalid_argument("input_pgd: " + std::to_string(x.size()) + " values for " +
                                std::to_string(labels.size()) + " labels of dim " + std::to_string(dim));
  }
  if (!(epsilon >= 0.0)) throw ConfigError("input_pgd: epsilon must be >= 0");
  std::vector<double> adv(x.begin(), x.end());
  if (epsilon == 0.0) return adv;

  std::vector<double> lo(x.size()), hi(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo[i] = std::max(0.0, x[i] - epsilon);
    hi[i] = std::min(1.0, x[i] + epsilon);
  }
  std::uniform_real_distribution<double> unif(-epsilon, epsilon);
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = std::clamp(adv[i] + unif(rng), lo[i], hi[i]);

  constexpr std::size_t kChunk = 256;
  const std::size_t n = labels.size();
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t bs = std::min(kChunk, n - start);
    const auto y = labels.subspan(start, bs);
    for (std::size_t k = 0; k < steps; ++k) {
      ad::Graph g;
      const auto xt = g.variable({bs, dim}, std::vector<double>(adv.begin() + static_cast<std::ptrdiff_t>(start * dim),
                                                               adv.begin() + static_cast<std::ptrdiff_t>((start + bs) * dim)));
      g.backward(ad::cross_entropy(f.logits(xt), y, ad::Reduction::kSum));
      const auto grad = xt.grad();
      for (std::size_t i = 0; i < bs * dim; ++i) {
        const std::size_t idx = start * dim + i;
        const double gi = grad[i];
        const double s = gi > 0.0 ? 1.0 : (gi < 0.0 ? -1.0 : 0.0);
        adv[idx] = std::clamp(adv[idx] + step_size * s, lo[idx], hi[idx]);
      }
    }
  }
  return adv;
}

EnvironmentRisk environment_worst_case(const model::Classifier& f, const gen::Decoder& dec,
                                       std::span<const gen::FactorLatent> latents,
                                       std::span<const int> labels,
                                       std::span<const std::vector<double>> env_perps) {
  if (env_perps.empty()) throw std::invalid_argument("environment_worst_case: no environments");
  if (latents.size() != labels.size() || latents.empty()) {
    throw std::invalid_argument("environment_worst_case: latents and labels must be non-empty and equal in count");
  }
  EnvironmentRisk out;
  for (const auto& e : env_perps) {
    std::vector<gen::FactorLatent> moved(latents.begin(), latents.end());
    for (auto& z : moved) z.z_perp = e;
    const auto pred = f.predict(gen::decode_batch(dec, moved));
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i] != labels[i];
    out.risks.push_back(static_cast<double>(wrong) / static_cast<double>(pred.size()));
  }
  out.max = *std::max_element(out.risks.begin(), out.risks.end());
  double s = 0.0;
  for (double r : out.risks) s += r;
  out.mean = s / static_cast<double>(out.risks.size());
  return out;
}

}  // namespace advmix::attack
