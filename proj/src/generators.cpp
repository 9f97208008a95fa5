#include "advmix/generators.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "advmix/errors.hpp"

namespace advmix::gen {

void Decoder::check(const FactorLatent& z) const {
  if (z.z_par.size() != par_dim() || z.z_perp.size() != perp_dim()) {
    throw std::invalid_argument("decode: latent dims (" + std::to_string(z.z_par.size()) + ", " +
                                std::to_string(z.z_perp.size()) + "), decoder expects (" +
                                std::to_string(par_dim()) + ", " + std::to_string(perp_dim()) + ")");
  }
}

std::vector<double> Decoder::decode(const FactorLatent& z) const {
  check(z);
  ad::Graph g;
  const auto zp = g.constant({1, par_dim()}, z.z_par);
  const auto zq = g.constant({1, perp_dim()}, z.z_perp);
  const auto img = render(zp, zq);
  return {img.data().begin(), img.data().end()};
}

std::vector<double> decode(const Decoder& dec, const FactorLatent& z) { return dec.decode(z); }

std::vector<double> mix(const Decoder& dec, const FactorLatent& a, const FactorLatent& b) {
  dec.check(a);
  dec.check(b);
  return dec.decode(FactorLatent{a.z_par, b.z_perp});
}

std::vector<double> sample_perp(const Decoder& dec, Rng& rng) { return dec.sample_perp(rng); }

std::vector<double> decode_batch(const Decoder& dec, std::span<const FactorLatent> z) {
  constexpr std::size_t kChunk = 256;
  const std::size_t dp = dec.par_dim(), dq = dec.perp_dim();
  std::vector<double> out;
  out.reserve(z.size() * dec.image_shape().size());
  for (std::size_t start = 0; start < z.size(); start += kChunk) {
    const std::size_t bs = std::min(kChunk, z.size() - start);
    std::vector<double> zp, zq;
    zp.reserve(bs * dp);
    zq.reserve(bs * dq);
    for (std::size_t i = start; i < start + bs; ++i) {
      dec.check(z[i]);
      zp.insert(zp.end(), z[i].z_par.begin(), z[i].z_par.end());
      zq.insert(zq.end(), z[i].z_perp.begin(), z[i].z_perp.end());
    }
    ad::Graph g;
    const auto img = dec.render(g.constant({bs, dp}, std::move(zp)), g.constant({bs, dq}, std::move(zq)));
    out.insert(out.end(), img.data().begin(), img.data().end());
  }
  return out;
}

std::vector<double> stack_rows(std::span<const std::vector<double>> rows, std::size_t dim) {
  std::vector<double> out;
  out.reserve(rows.size() * dim);
  for (const auto& r : rows) {
    if (r.size() != dim) {
      throw std::invalid_argument("stack_rows: row of size " + std::to_string(r.size()) +
                                  ", expected " + std::to_string(dim));
    }
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

ColorSampler ColorSampler::uniform_box() { return ColorSampler{}; }

ColorSampler ColorSampler::discrete(std::vector<Color> colors, std::vector<double> weights,
                                    double jitter_std) {
  if (colors.empty()) throw ConfigError("color sampler needs at least one color");
  if (!weights.empty() && weights.size() != colors.size()) {
    throw ConfigError("color sampler: " + std::to_string(weights.size()) + " weights for " +
                      std::to_string(colors.size()) + " colors");
  }
  if (!(jitter_std >= 0.0)) throw ConfigError("color sampler: jitter std must be >= 0");
  ColorSampler s;
  s.uniform_box_ = false;
  s.colors_ = std::move(colors);
  s.weights_ = std::move(weights);
  s.jitter_std_ = jitter_std;
  if (!s.weights_.empty()) {
    double total = 0.0;
    for (double w : s.weights_) {
      if (!(w >= 0.0)) throw ConfigError("color sampler: negative weight");
      total += w;
      s.cumulative_.push_back(total);
    }
    if (!(total > 0.0)) throw ConfigError("color sampler: weights sum to zero");
    for (auto& c : s.cumulative_) c /= total;
  }
  return s;
}

Color ColorSampler::sample(Rng& rng) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (uniform_box_) {
    Color c{};
    for (auto& v : c) v = unit(rng);
    return c;
  }
  std::size_t k = 0;
  if (cumulative_.empty()) {
    k = std::uniform_int_distribution<std::size_t>(0, colors_.size() - 1)(rng);
  } else {
    const double u = unit(rng);
    k = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), u) -
                                 cumulative_.begin());
    k = std::min(k, colors_.size() - 1);
  }
  Color c = colors_[k];
  if (jitter_std_ > 0.0) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : c) {
      double n = normal(rng);
      while (std::abs(n) > 5.0) n = normal(rng);
      v = std::clamp(v + jitter_std_ * n, 0.0, 1.0);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------

ProceduralGlyphDecoder::ProceduralGlyphDecoder(std::shared_ptr<const data::GrayDataset> glyphs,
                                               ColorSampler sampler)
    : glyphs_(std::move(glyphs)), sampler_(std::move(sampler)) {
  if (!glyphs_ || glyphs_->size() == 0) throw DataError("procedural decoder: empty glyph bank");
}

ImageShape ProceduralGlyphDecoder::image_shape() const {
  return {glyphs_->rows, glyphs_->cols, 3};
}

std::size_t ProceduralGlyphDecoder::glyph_index(double z_par) const {
  const double r = std::round(z_par);
  if (!(r >= 0.0 && r < static_cast<double>(glyphs_->size())) || r != z_par) {
    throw std::invalid_argument("procedural decoder: z_par " + std::to_string(z_par) +
                                " is not a glyph index in [0, " + std::to_string(glyphs_->size()) + ")");
  }
  return static_cast<std::size_t>(r);
}

ad::Tensor ProceduralGlyphDecoder::render(const ad::Tensor& z_par, const ad::Tensor& z_perp) const {
  const auto& ps = z_par.shape();
  if (ps.size() != 2 || ps[1] != 1 || z_perp.shape().size() != 2 || z_perp.shape()[1] != 3 ||
      z_perp.shape()[0] != ps[0]) {
    throw std::invalid_argument("procedural render: z_par " + ad::to_string(ps) + ", z_perp " +
                                ad::to_string(z_perp.shape()) + ", expected [B,1] and [B,3]");
  }
  const std::size_t batch = ps[0];
  const std::size_t pixels = glyphs_->image_size();
  std::vector<double> gray(batch * pixels);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto g = glyphs_->image(glyph_index(z_par.data()[b]));
    std::copy(g.begin(), g.end(), gray.begin() + static_cast<std::ptrdiff_t>(b * pixels));
  }
  auto& graph = z_perp.graph();
  const auto shape = graph.constant({batch, pixels}, std::move(gray));
  return ad::clamp01(ad::colorize(shape, ad::clamp01(z_perp)));
}

std::vector<double> ProceduralGlyphDecoder::render_pixels(std::span<const double> glyph,
                                                          const Color& color) {
  std::vector<double> out(glyph.size() * 3);
  Color c{};
  for (std::size_t ch = 0; ch < 3; ++ch) c[ch] = std::clamp(color[ch], 0.0, 1.0);
  for (std::size_t p = 0; p < glyph.size(); ++p)
    for (std::size_t ch = 0; ch < 3; ++ch) out[p * 3 + ch] = std::clamp(glyph[p] * c[ch], 0.0, 1.0);
  return out;
}

std::vector<double> ProceduralGlyphDecoder::decode(const FactorLatent& z) const {
  check(z);
  return render_pixels(glyphs_->image(glyph_index(z.z_par[0])), {z.z_perp[0], z.z_perp[1], z.z_perp[2]});
}

std::vector<double> ProceduralGlyphDecoder::sample_perp(Rng& rng) const {
  const Color c = sampler_.sample(rng);
  return {c.begin(), c.end()};
}

std::optional<PerpBox> ProceduralGlyphDecoder::perp_box() const {
  return PerpBox{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
}

// ---------------------------------------------------------------------------

ad::Tensor ToyDecoder::render(const ad::Tensor& z_par, const ad::Tensor& z_perp) const {
  return ad::concat_cols(z_perp, z_par);
}

std::vector<double> ToyDecoder::sample_perp(Rng& rng) const {
  return {std::bernoulli_distribution(0.5)(rng) ? 10.0 : 0.0};
}

std::optional<PerpBox> ToyDecoder::perp_box() const { return PerpBox{{0.0}, {10.0}}; }

std::vector<double> ToyDecoder::decode_noisy(const FactorLatent& z, Rng& rng) const {
  check(z);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double x1 = z.z_perp[0] + kToyX1Std * normal(rng);
  const double x2 = z.z_par[0] + kToyX2Std * normal(rng);
  return {x1, x2};
}

// ---------------------------------------------------------------------------

bool typical_shell_check(std::span<const double> z, double delta) {
  if (z.empty()) return false;
  double sq = 0.0;
  for (double v : z) sq += v * v;
  const double norm = std::sqrt(sq);
  const double d = static_cast<double>(z.size());
  const double half_width = delta * std::pow(d, 0.25);
  return norm >= std::sqrt(d) - half_width && norm <= std::sqrt(d) + half_width;
}

void PerpRegion::validate() const {
  if (center.empty()) throw ConfigError("perp region: empty center");
  if (!(radius_inf > 0.0)) {
    throw ConfigError("perp region: radius must be > 0, got " + std::to_string(radius_inf));
  }
  for (const auto* bound : {&box_lo, &box_hi}) {
    if (*bound && (*bound)->size() != center.size()) {
      throw ConfigError("perp region: box dimension does not match center");
    }
  }
  for (std::size_t i = 0; i < center.size(); ++i) {
    if ((box_lo && center[i] < (*box_lo)[i]) || (box_hi && center[i] > (*box_hi)[i])) {
      throw ConfigError("perp region: center coordinate " + std::to_string(i) + " outside the box");
    }
  }
}

namespace {

constexpr double kSimplexTol = 1e-12;

}  // namespace

std::vector<double> project_perp(std::span<const double> z, const PerpRegion& region) {
  const std::size_t d = region.center.size();
  if (z.size() != d) {
    throw std::invalid_argument("project_perp: z has " + std::to_string(z.size()) +
                                " coordinates, region has " + std::to_string(d));
  }
  std::vector<double> lo(d), hi(d);
  for (std::size_t i = 0; i < d; ++i) {
    lo[i] = region.center[i] - region.radius_inf;
    hi[i] = region.center[i] + region.radius_inf;
    if (region.box_lo) lo[i] = std::max(lo[i], (*region.box_lo)[i]);
    if (region.box_hi) hi[i] = std::min(hi[i], (*region.box_hi)[i]);
  }
  std::vector<double> out(z.begin(), z.end());
  if (!region.simplex) {
    for (std::size_t i = 0; i < d; ++i) out[i] = std::clamp(out[i], lo[i], hi[i]);
    return out;
  }

  bool inside = true;
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    inside = inside && out[i] >= lo[i] && out[i] <= hi[i];
    total += out[i];
  }
  if (inside && std::abs(total - 1.0) <= kSimplexTol) return out;

  double lo_sum = 0.0, hi_sum = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    lo_sum += lo[i];
    hi_sum += hi[i];
  }
  if (lo_sum > 1.0 + kSimplexTol || hi_sum < 1.0 - kSimplexTol) {
    throw std::invalid_argument("project_perp: the region does not meet the simplex");
  }
  // sum_i clip(z_i - tau, lo_i, hi_i) is non-increasing in tau.
  auto mass = [&](double tau) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += std::clamp(z[i] - tau, lo[i], hi[i]);
    return s;
  };
  double a = *std::min_element(z.begin(), z.end()) - *std::max_element(hi.begin(), hi.end()) - 1.0;
  double b = *std::max_element(z.begin(), z.end()) - *std::min_element(lo.begin(), lo.end()) + 1.0;
  for (int it = 0; it < 200 && b - a > 0.0; ++it) {
    const double m = 0.5 * (a + b);
    if (m == a || m == b) break;
    (mass(m) > 1.0 ? a : b) = m;
  }
  const double tau = 0.5 * (a + b);
  for (std::size_t i = 0; i < d; ++i) out[i] = std::clamp(z[i] - tau, lo[i], hi[i]);
  // Put the residual rounding error on a free coordinate so the sum is exact to tolerance.
  total = 0.0;
  for (double v : out) total += v;
  for (std::size_t i = 0; i < d && std::abs(total - 1.0) > kSimplexTol * 0.5; ++i) {
    const double moved = std::clamp(out[i] + (1.0 - total), lo[i], hi[i]);
    total += moved - out[i];
    out[i] = moved;
  }
  return out;
}

}  // namespace advmix::gen
