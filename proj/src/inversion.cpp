#include "advmix/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "advmix/binary_io.hpp"
#include "advmix/errors.hpp"

namespace advmix::inv {

void EncoderConfig::validate(std::size_t feature_layers) const {
  if (init_samples < 1) throw ConfigError("encoder: init_samples (M) must be >= 1");
  if (iterations < 1) throw ConfigError("encoder: iterations (N) must be >= 1");
  if (!(step > 0.0)) throw ConfigError("encoder: step must be > 0");
  if (alpha_weights.size() != feature_layers + 1) {
    throw ConfigError("encoder: expected " + std::to_string(feature_layers + 1) +
                      " alpha weights, got " + std::to_string(alpha_weights.size()));
  }
  if (beta_weights.size() != feature_layers) {
    throw ConfigError("encoder: expected " + std::to_string(feature_layers) +
                      " beta weights, got " + std::to_string(beta_weights.size()));
  }
  for (double w : alpha_weights)
    if (!(w >= 0.0)) throw ConfigError("encoder: alpha weights must be >= 0");
  for (double w : beta_weights)
    if (!(w >= 0.0)) throw ConfigError("encoder: beta weights must be >= 0");
  if (use_mix && mix_partners < 1) throw ConfigError("encoder: mix_partners must be >= 1");
}

FeatureNet::FeatureNet(model::Classifier net, std::size_t channels)
    : net_(std::move(net)), channels_(channels) {
  if (channels_ == 0) throw std::invalid_argument("FeatureNet: zero channels");
}

ad::Tensor FeatureNet::profile(const ad::Tensor& x, std::size_t channels) {
  return ad::normalize_rows(ad::channel_mean(x, channels));
}

std::vector<double> FeatureNet::profile_values(std::span<const double> images, std::size_t rows,
                                               std::size_t channels) {
  if (rows == 0) return {};
  ad::Graph g;
  const auto p = profile(g.constant_view({rows, images.size() / rows}, images), channels);
  return {p.data().begin(), p.data().end()};
}

namespace {

ad::Tensor sq_dist_rows(const ad::Tensor& a, const ad::Tensor& b) {
  return ad::sum_rows(ad::square(ad::sub(a, b)));
}

ad::Tensor weighted_sum(std::vector<ad::Tensor> terms, std::span<const double> w) {
  ad::Tensor total;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto t = ad::mul(terms[i], w[i]);
    total = total.valid() ? ad::add(total, t) : t;
  }
  return total;
}

}  // namespace

ad::Tensor reconstruct_loss_rows(const ad::Tensor& x_hat, const ad::Tensor& x,
                                 std::span<const ad::Tensor> feats_hat,
                                 std::span<const ad::Tensor> feats,
                                 std::span<const double> alpha_weights) {
  if (feats_hat.size() != feats.size() || alpha_weights.size() != feats.size() + 1) {
    throw std::invalid_argument("reconstruct_loss: " + std::to_string(feats_hat.size()) + " and " +
                                std::to_string(feats.size()) + " feature layers with " +
                                std::to_string(alpha_weights.size()) + " weights");
  }
  std::vector<ad::Tensor> terms{sq_dist_rows(x_hat, x)};
  for (std::size_t i = 0; i < feats.size(); ++i) terms.push_back(sq_dist_rows(feats_hat[i], feats[i]));
  return weighted_sum(std::move(terms), alpha_weights);
}

ad::Tensor mix_loss_rows(std::span<const ad::Tensor> feats_mixed, std::span<const ad::Tensor> feats,
                         std::span<const double> beta_weights) {
  if (feats_mixed.size() != feats.size() || beta_weights.size() != feats.size() || feats.empty()) {
    throw std::invalid_argument("mix_loss: " + std::to_string(feats_mixed.size()) + " and " +
                                std::to_string(feats.size()) + " feature layers with " +
                                std::to_string(beta_weights.size()) + " weights");
  }
  std::vector<ad::Tensor> terms;
  for (std::size_t i = 0; i < feats.size(); ++i) terms.push_back(sq_dist_rows(feats_mixed[i], feats[i]));
  return weighted_sum(std::move(terms), beta_weights);
}

ad::Tensor reconstruct_loss(const ad::Tensor& x_hat, const ad::Tensor& x,
                            std::span<const ad::Tensor> feats_hat, std::span<const ad::Tensor> feats,
                            std::span<const double> alpha_weights) {
  return ad::sum(reconstruct_loss_rows(x_hat, x, feats_hat, feats, alpha_weights));
}

ad::Tensor mix_loss(std::span<const ad::Tensor> feats_mixed, std::span<const ad::Tensor> feats,
                    std::span<const double> beta_weights) {
  return ad::sum(mix_loss_rows(feats_mixed, feats, beta_weights));
}

// ---------------------------------------------------------------------------

std::vector<EncodeResult> encode_batch(const gen::LearnedDecoder& dec, const FeatureNet& net,
                                       std::span<const double> images, const EncoderConfig& cfg,
                                       std::span<const std::uint64_t> seeds,
                                       std::span<const gen::FactorLatent> init) {
  cfg.validate(net.layers());
  const std::size_t pixels = dec.image_shape().size();
  if (net.input_dim() != pixels) throw std::invalid_argument("encode: feature net input does not match the decoder");
  if (images.size() != seeds.size() * pixels) {
    throw std::invalid_argument("encode: " + std::to_string(images.size()) + " values for " +
                                std::to_string(seeds.size()) + " images of " + std::to_string(pixels));
  }
  if (!init.empty() && init.size() != seeds.size()) throw std::invalid_argument("encode: init count mismatch");
  for (double v : images) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("encode: image values must lie in [0,1]");
  }
  const std::size_t n = seeds.size();
  const std::size_t dp = dec.par_dim(), dq = dec.perp_dim();
  const std::size_t partners = cfg.use_mix ? cfg.mix_partners : 0;
  const auto box = dec.perp_box();

  // Averaged-latent start and fixed mixing partners per image.
  std::vector<double> zp(n * dp, 0.0), zq(n * dq, 0.0);
  std::vector<std::vector<double>> partner_perp(partners, std::vector<double>(n * dq));
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seeds[i]);
    if (init.empty()) {
      for (std::size_t m = 0; m < cfg.init_samples; ++m) {
        const auto a = dec.sample_par(rng);
        const auto b = dec.sample_perp(rng);
        for (std::size_t k = 0; k < dp; ++k) zp[i * dp + k] += a[k] / static_cast<double>(cfg.init_samples);
        for (std::size_t k = 0; k < dq; ++k) zq[i * dq + k] += b[k] / static_cast<double>(cfg.init_samples);
      }
    } else {
      dec.check(init[i]);
      std::copy(init[i].z_par.begin(), init[i].z_par.end(), zp.begin() + static_cast<std::ptrdiff_t>(i * dp));
      std::copy(init[i].z_perp.begin(), init[i].z_perp.end(), zq.begin() + static_cast<std::ptrdiff_t>(i * dq));
    }
    for (std::size_t p = 0; p < partners; ++p) {
      const auto b = dec.sample_perp(rng);
      std::copy(b.begin(), b.end(), partner_perp[p].begin() + static_cast<std::ptrdiff_t>(i * dq));
    }
  }

  // Target features are fixed; compute them once.
  std::vector<std::vector<double>> target_feats;
  {
    ad::Graph g;
    const auto f = net.features(g.constant_view({n, pixels}, images));
    for (const auto& t : f) target_feats.emplace_back(t.data().begin(), t.data().end());
  }

  struct RowState {
    std::vector<double> z_acc, g_acc, z_cur;
    double loss_acc = 0.0;
    double gamma = 0.0;
  };
  std::vector<RowState> rows(n);
  std::vector<EncodeResult> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].z_cur.assign(dp + dq, 0.0);
    std::copy_n(zp.begin() + static_cast<std::ptrdiff_t>(i * dp), dp, rows[i].z_cur.begin());
    std::copy_n(zq.begin() + static_cast<std::ptrdiff_t>(i * dq), dq, rows[i].z_cur.begin() + static_cast<std::ptrdiff_t>(dp));
    rows[i].gamma = cfg.step;
  }

  const double mix_scale = partners > 0 ? 1.0 / static_cast<double>(partners) : 0.0;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<double> cur_par(n * dp), cur_perp(n * dq);
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(rows[i].z_cur.begin(), dp, cur_par.begin() + static_cast<std::ptrdiff_t>(i * dp));
      std::copy_n(rows[i].z_cur.begin() + static_cast<std::ptrdiff_t>(dp), dq, cur_perp.begin() + static_cast<std::ptrdiff_t>(i * dq));
    }
    ad::Graph g;
    const auto par_t = g.variable({n, dp}, std::move(cur_par));
    const auto perp_t = g.variable({n, dq}, std::move(cur_perp));
    const auto x_t = g.constant_view({n, pixels}, images);
    std::vector<ad::Tensor> tf;
    for (std::size_t l = 0; l < target_feats.size(); ++l) {
      tf.push_back(g.constant_view({n, target_feats[l].size() / n}, target_feats[l]));
    }
    const auto x_hat = dec.render(par_t, perp_t);
    const auto rec = reconstruct_loss_rows(x_hat, x_t, net.features(x_hat), tf, cfg.alpha_weights);
    ad::Tensor mix;
    for (std::size_t p = 0; p < partners; ++p) {
      const auto mixed = dec.render(par_t, g.constant_view({n, dq}, partner_perp[p]));
      const auto term = mix_loss_rows(net.features(mixed), tf, cfg.beta_weights);
      mix = mix.valid() ? ad::add(mix, term) : term;
    }
    const auto total = partners > 0 ? ad::add(rec, ad::mul(mix, mix_scale)) : rec;
    const auto loss_values = total.data();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(loss_values[i])) {
        std::ostringstream msg;
        msg << "encode: non-finite loss at step " << it << " for image " << i
            << " (reconstruction " << rec.data()[i];
        if (partners > 0) msg << ", mixing " << mix.data()[i] * mix_scale;
        msg << ")";
        throw NumericError(msg.str());
      }
    }
    g.backward(ad::sum(total));
    const auto gp = par_t.grad();
    const auto gq = perp_t.grad();

    for (std::size_t i = 0; i < n; ++i) {
      auto& r = rows[i];
      const double l = loss_values[i];
      if (it == 0 || l <= r.loss_acc) {
        if (it == 0) out[i].initial_loss = l;
        else ++out[i].accepted_steps;
        r.z_acc = r.z_cur;
        r.loss_acc = l;
        r.g_acc.assign(dp + dq, 0.0);
        std::copy_n(gp.begin() + static_cast<std::ptrdiff_t>(i * dp), dp, r.g_acc.begin());
        std::copy_n(gq.begin() + static_cast<std::ptrdiff_t>(i * dq), dq, r.g_acc.begin() + static_cast<std::ptrdiff_t>(dp));
      } else {
        r.gamma *= 0.5;
      }
      out[i].loss_trace.push_back(r.loss_acc);
      // Moves have length gamma in latent space, independent of the loss scale.
      double norm = 0.0;
      for (double v : r.g_acc) norm += v * v;
      norm = std::sqrt(norm);
      const double scale = norm > 0.0 ? r.gamma / norm : 0.0;
      for (std::size_t k = 0; k < dp + dq; ++k) r.z_cur[k] = r.z_acc[k] - scale * r.g_acc[k];
      if (box) {
        for (std::size_t k = 0; k < dq; ++k)
          r.z_cur[dp + k] = std::clamp(r.z_cur[dp + k], box->first[k], box->second[k]);
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    out[i].z.z_par.assign(rows[i].z_acc.begin(), rows[i].z_acc.begin() + static_cast<std::ptrdiff_t>(dp));
    out[i].z.z_perp.assign(rows[i].z_acc.begin() + static_cast<std::ptrdiff_t>(dp), rows[i].z_acc.end());
    out[i].loss = rows[i].loss_acc;
  }
  return out;
}

EncodeResult encode(const gen::LearnedDecoder& dec, const FeatureNet& net,
                    std::span<const double> image, const EncoderConfig& cfg, std::uint64_t seed) {
  return std::move(encode_batch(dec, net, image, cfg, std::span<const std::uint64_t>(&seed, 1))[0]);
}

gen::FactorLatent invert_procedural(const gen::ProceduralGlyphDecoder& dec,
                                    const data::ColoredExample& example) {
  if (!example.provenance) {
    throw DataError("invert_procedural: image has no recorded provenance; use encode() with a learned decoder");
  }
  const auto& p = *example.provenance;
  if (p.glyph_index >= dec.glyphs().size()) {
    throw DataError("invert_procedural: glyph index " + std::to_string(p.glyph_index) +
                    " outside the decoder's bank of " + std::to_string(dec.glyphs().size()));
  }
  gen::FactorLatent z{{static_cast<double>(p.glyph_index)}, {p.color[0], p.color[1], p.color[2]}};
  if (dec.decode(z) != example.image) {
    throw DataError("invert_procedural: provenance of glyph " + std::to_string(p.glyph_index) +
                    " does not reproduce the image; was it built from a different glyph bank?");
  }
  return z;
}

LatentDataset invert_all(const gen::ProceduralGlyphDecoder& dec,
                         const std::vector<data::ColoredExample>& examples) {
  LatentDataset out;
  out.latents.reserve(examples.size());
  for (const auto& ex : examples) {
    out.latents.push_back(invert_procedural(dec, ex));
    out.labels.push_back(ex.label);
  }
  return out;
}

void save_latents(const LatentDataset& dataset, const std::filesystem::path& path) {
  if (dataset.latents.size() != dataset.labels.size()) throw DataError("save_latents: count mismatch");
  const std::size_t dp = dataset.latents.empty() ? 0 : dataset.latents[0].z_par.size();
  const std::size_t dq = dataset.latents.empty() ? 0 : dataset.latents[0].z_perp.size();
  io::ByteWriter w;
  w.magic("ADVMIXL1");
  w.i32(io::checked_i32(dataset.size(), "count"));
  w.i32(io::checked_i32(dp, "d_par"));
  w.i32(io::checked_i32(dq, "d_perp"));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& z = dataset.latents[i];
    if (z.z_par.size() != dp || z.z_perp.size() != dq) throw DataError("save_latents: ragged latent dims");
    w.i32(dataset.labels[i]);
    w.f64s(z.z_par);
    w.f64s(z.z_perp);
  }
  w.write_file(path);
}

LatentDataset load_latents(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("ADVMIXL1");
  const auto count = r.i32("count");
  const auto dp = r.i32("d_par");
  const auto dq = r.i32("d_perp");
  if (count < 0 || dp < 0 || dq < 0) throw DataError(path.string() + ": negative header field");
  LatentDataset out;
  for (std::int32_t i = 0; i < count; ++i) {
    const auto y = r.i32("label");
    if (y < 0 || y >= static_cast<std::int32_t>(data::kNumClasses)) {
      throw DataError(path.string() + ": label " + std::to_string(y) + " out of range at offset " +
                      std::to_string(r.offset() - 4));
    }
    out.labels.push_back(y);
    gen::FactorLatent z;
    z.z_par = r.f64s(static_cast<std::size_t>(dp), "z_par");
    z.z_perp = r.f64s(static_cast<std::size_t>(dq), "z_perp");
    out.latents.push_back(std::move(z));
  }
  r.expect_end();
  return out;
}

}  // namespace advmix::inv
