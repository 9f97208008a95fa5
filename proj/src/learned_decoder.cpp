#include <algorithm>
#include <cmath>
#include <numeric>

#include "advmix/binary_io.hpp"
#include "advmix/errors.hpp"
#include "advmix/generators.hpp"

namespace advmix::gen {

namespace {

enum ParamIndex { kW1, kB1, kW2, kB2, kU, kUb, kV, kVb, kParamCount };

ad::Parameter glorot(std::string name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> unif(-limit, limit);
  ad::Parameter p{std::move(name), {fan_in, fan_out}, std::vector<double>(fan_in * fan_out)};
  for (auto& v : p.values) v = unif(rng);
  return p;
}

ad::Parameter zeros(std::string name, ad::Shape shape) {
  const std::size_t n = ad::numel(shape);
  return {std::move(name), std::move(shape), std::vector<double>(n, 0.0)};
}

}  // namespace

LearnedDecoder::LearnedDecoder(std::size_t par_dim, std::size_t hidden, std::size_t color_hidden,
                               ImageShape shape, Rng& init_rng)
    : par_dim_(par_dim), hidden_(hidden), color_hidden_(color_hidden), shape_(shape) {
  if (par_dim == 0 || hidden == 0 || color_hidden == 0 || shape.channels != 3 || shape.size() == 0) {
    throw ConfigError("learned decoder: invalid dimensions");
  }
  const std::size_t gray = shape.height * shape.width;
  params_.push_back(glorot("W1", par_dim + 3, hidden, init_rng));
  params_.push_back(zeros("b1", {hidden}));
  params_.push_back(glorot("W2", hidden, gray, init_rng));
  params_.push_back(zeros("b2", {gray}));
  params_.push_back(glorot("U", 3, color_hidden, init_rng));
  params_.push_back(zeros("u", {color_hidden}));
  params_.push_back(zeros("V", {color_hidden, 3}));
  params_.push_back(zeros("v", {3}));
  code_mean_.assign(par_dim, 0.0);
  code_std_.assign(par_dim, 1.0);
}

ad::Tensor LearnedDecoder::render_with(const std::vector<ad::Tensor>& p, const ad::Tensor& z_par,
                                       const ad::Tensor& z_perp) const {
  const auto z = ad::concat_cols(z_par, z_perp);
  const auto h = ad::relu(ad::add_bias(ad::matmul(z, p[kW1]), p[kB1]));
  const auto gray = ad::sigmoid(ad::add_bias(ad::matmul(h, p[kW2]), p[kB2]));
  const auto hc = ad::relu(ad::add_bias(ad::matmul(z_perp, p[kU]), p[kUb]));
  const auto color = ad::add(z_perp, ad::add_bias(ad::matmul(hc, p[kV]), p[kVb]));
  return ad::clamp01(ad::colorize(gray, color));
}

ad::Tensor LearnedDecoder::render(const ad::Tensor& z_par, const ad::Tensor& z_perp) const {
  const auto& ps = z_par.shape();
  if (ps.size() != 2 || ps[1] != par_dim_ || z_perp.shape().size() != 2 ||
      z_perp.shape()[1] != 3 || z_perp.shape()[0] != ps[0]) {
    throw std::invalid_argument("learned render: z_par " + ad::to_string(ps) + ", z_perp " +
                                ad::to_string(z_perp.shape()) + ", expected [B," +
                                std::to_string(par_dim_) + "] and [B,3]");
  }
  auto& g = z_par.graph();
  std::vector<ad::Tensor> p;
  p.reserve(params_.size());
  for (const auto& param : params_) p.push_back(g.constant_view(param.shape, param.values));
  return render_with(p, z_par, z_perp);
}

std::vector<double> LearnedDecoder::sample_perp(Rng& rng) const {
  const Color c = sampler_.sample(rng);
  return {c.begin(), c.end()};
}

std::optional<PerpBox> LearnedDecoder::perp_box() const {
  return PerpBox{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}};
}

std::vector<double> LearnedDecoder::sample_par(Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(par_dim_);
  for (std::size_t i = 0; i < par_dim_; ++i) z[i] = code_mean_[i] + code_std_[i] * normal(rng);
  return z;
}

void LearnedDecoder::set_color_table(std::vector<Color> table) {
  if (table.empty()) throw DataError("learned decoder: empty color table");
  color_table_ = std::move(table);
  sampler_ = ColorSampler::discrete(color_table_, {}, jitter_std_);
}

LearnedDecoder LearnedDecoder::train(const std::vector<data::ColoredExample>& examples,
                                     const LearnedDecoderOptions& options, Rng& rng,
                                     TrainResult* result) {
  if (examples.empty()) throw DataError("learned decoder: no training examples");
  if (options.epochs == 0 || options.batch_size == 0 || !(options.lr > 0.0)) {
    throw ConfigError("learned decoder: epochs, batch_size and lr must be positive");
  }
  const ImageShape shape{data::kImageSize, data::kImageSize, data::kChannels};
  for (const auto& ex : examples) {
    if (!ex.provenance) throw DataError("learned decoder: training example without provenance");
    if (ex.image.size() != shape.size()) throw DataError("learned decoder: image size mismatch");
  }
  LearnedDecoder dec(options.par_dim, options.hidden, options.color_hidden, shape, rng);
  dec.jitter_std_ = options.jitter_std;

  const std::size_t n = examples.size();
  const std::size_t dp = options.par_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> codes(n * dp);
  for (auto& c : codes) c = 0.1 * normal(rng);

  // Per-code Adam moments; each row advances only when it is in a batch.
  const ad::AdamOptions adam;
  std::vector<double> code_m(n * dp, 0.0), code_v(n * dp, 0.0);
  std::vector<std::int64_t> code_steps(n, 0);
  ad::AdamState state;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_rmse;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sq_err = 0.0;
    for (std::size_t start = 0; start < n; start += options.batch_size) {
      const std::size_t bs = std::min(options.batch_size, n - start);
      std::vector<double> zp(bs * dp), zq(bs * 3), target(bs * shape.size());
      for (std::size_t b = 0; b < bs; ++b) {
        const std::size_t i = order[start + b];
        std::copy_n(codes.begin() + static_cast<std::ptrdiff_t>(i * dp), dp, zp.begin() + static_cast<std::ptrdiff_t>(b * dp));
        std::copy_n(examples[i].provenance->color.begin(), 3, zq.begin() + static_cast<std::ptrdiff_t>(b * 3));
        std::copy(examples[i].image.begin(), examples[i].image.end(),
                  target.begin() + static_cast<std::ptrdiff_t>(b * shape.size()));
      }
      ad::Graph g;
      std::vector<ad::Tensor> p;
      for (const auto& param : dec.params_) p.push_back(g.variable(param.shape, param.values));
      const auto code_t = g.variable({bs, dp}, zp);
      const auto color_t = g.constant({bs, 3}, zq);
      const auto img = dec.render_with(p, code_t, color_t);
      const auto diff = ad::sub(img, g.constant_view({bs, shape.size()}, target));
      const auto rec = ad::mean(ad::square(diff));
      const auto loss = ad::add(rec, ad::mul(ad::mean(ad::square(code_t)), options.code_l2));
      if (!std::isfinite(loss.item())) {
        throw NumericError("learned decoder: non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch offset " + std::to_string(start));
      }
      sq_err += rec.item() * static_cast<double>(bs * shape.size());
      g.backward(loss);

      std::vector<std::vector<double>> grads;
      for (const auto& t : p) grads.emplace_back(t.grad().begin(), t.grad().end());
      ad::adam_step(dec.params_, grads, state, options.lr, adam);

      const auto cg = code_t.grad();
      for (std::size_t b = 0; b < bs; ++b) {
        const std::size_t i = order[start + b];
        const auto t = static_cast<double>(++code_steps[i]);
        const double c1 = 1.0 - std::pow(adam.beta1, t);
        const double c2 = 1.0 - std::pow(adam.beta2, t);
        for (std::size_t k = 0; k < dp; ++k) {
          const std::size_t j = i * dp + k;
          const double gk = cg[b * dp + k];
          code_m[j] = adam.beta1 * code_m[j] + (1.0 - adam.beta1) * gk;
          code_v[j] = adam.beta2 * code_v[j] + (1.0 - adam.beta2) * gk * gk;
          codes[j] -= options.lr * (code_m[j] / c1) / (std::sqrt(code_v[j] / c2) + adam.eps);
        }
      }
    }
    epoch_rmse.push_back(std::sqrt(sq_err / static_cast<double>(n * shape.size())));
  }

  // Final reconstruction error with the fitted codes.
  double sq_err = 0.0;
  for (std::size_t start = 0; start < n; start += 256) {
    const std::size_t bs = std::min<std::size_t>(256, n - start);
    ad::Graph g;
    std::vector<double> zq(bs * 3);
    for (std::size_t b = 0; b < bs; ++b)
      std::copy_n(examples[start + b].provenance->color.begin(), 3, zq.begin() + static_cast<std::ptrdiff_t>(b * 3));
    const auto img = dec.render(
        g.constant_view({bs, dp}, std::span<const double>(codes.data() + start * dp, bs * dp)),
        g.constant({bs, 3}, zq));
    const auto px = img.data();
    for (std::size_t b = 0; b < bs; ++b)
      for (std::size_t k = 0; k < shape.size(); ++k) {
        const double e = px[b * shape.size() + k] - examples[start + b].image[k];
        sq_err += e * e;
      }
  }
  dec.train_rmse_ = std::sqrt(sq_err / static_cast<double>(n * shape.size()));

  for (std::size_t k = 0; k < dp; ++k) {
    double m = 0.0, s = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += codes[i * dp + k];
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) s += (codes[i * dp + k] - m) * (codes[i * dp + k] - m);
    dec.code_mean_[k] = m;
    dec.code_std_[k] = std::sqrt(s / static_cast<double>(n));
  }

  std::vector<Color> table;
  table.reserve(n);
  for (const auto& ex : examples) table.push_back(ex.provenance->color);
  dec.set_color_table(std::move(table));

  if (result != nullptr) {
    result->codes.clear();
    for (std::size_t i = 0; i < n; ++i)
      result->codes.emplace_back(codes.begin() + static_cast<std::ptrdiff_t>(i * dp),
                                 codes.begin() + static_cast<std::ptrdiff_t>((i + 1) * dp));
    result->epoch_rmse = std::move(epoch_rmse);
  }
  return dec;
}

void LearnedDecoder::save(const std::filesystem::path& path) const {
  io::ByteWriter w;
  w.magic("ADVMIXD1");
  for (std::size_t v : {par_dim_, std::size_t{3}, hidden_, color_hidden_, shape_.height,
                        shape_.width, shape_.channels, color_table_.size(), params_.size()}) {
    w.i32(io::checked_i32(v, "decoder dimension"));
  }
  for (const auto& p : params_) w.f64s(p.values);
  w.f64s(code_mean_);
  w.f64s(code_std_);
  w.f64(train_rmse_);
  w.f64(jitter_std_);
  for (const auto& c : color_table_)
    for (double v : c) w.f64(v);
  w.write_file(path);
}

LearnedDecoder LearnedDecoder::load(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("ADVMIXD1");
  std::int32_t dims[9];
  const char* names[9] = {"par_dim", "perp_dim", "hidden", "color_hidden", "height",
                          "width",   "channels", "color count", "parameter count"};
  for (int i = 0; i < 9; ++i) {
    dims[i] = r.i32(names[i]);
    if (dims[i] <= 0 || dims[i] > (1 << 24)) {
      throw DataError(path.string() + ": invalid " + names[i] + " " + std::to_string(dims[i]) +
                      " in header at offset " + std::to_string(r.offset() - 4));
    }
  }
  if (dims[1] != 3 || dims[6] != 3 || dims[8] != kParamCount) {
    throw DataError(path.string() + ": unsupported decoder layout in header");
  }
  Rng dummy(0);
  LearnedDecoder dec(static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[2]),
                     static_cast<std::size_t>(dims[3]),
                     {static_cast<std::size_t>(dims[4]), static_cast<std::size_t>(dims[5]), 3}, dummy);
  for (auto& p : dec.params_) p.values = r.f64s(p.values.size(), p.name.c_str());
  dec.code_mean_ = r.f64s(dec.par_dim_, "code mean");
  dec.code_std_ = r.f64s(dec.par_dim_, "code std");
  dec.train_rmse_ = r.f64("train rmse");
  dec.jitter_std_ = r.f64("jitter");
  std::vector<Color> table(static_cast<std::size_t>(dims[7]));
  for (auto& c : table)
    for (auto& v : c) v = r.f64("color table");
  r.expect_end();
  dec.set_color_table(std::move(table));
  return dec;
}

}  // namespace advmix::gen
