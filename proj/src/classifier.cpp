#include "advmix/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "advmix/binary_io.hpp"
#include "advmix/errors.hpp"

namespace advmix::model {

namespace {

constexpr std::size_t kPredictChunk = 512;

}  // namespace

std::string to_string(Arch arch) { return arch == Arch::kLinear ? "linear" : "mlp2"; }

Arch parse_arch(const std::string& name) {
  if (name == "linear") return Arch::kLinear;
  if (name == "mlp2") return Arch::kMlp2;
  throw ConfigError("unknown classifier architecture '" + name + "' (expected linear or mlp2)");
}

Classifier::Classifier(Arch arch, std::size_t input_dim, std::size_t num_classes,
                       std::vector<std::size_t> hidden, Rng& init_rng)
    : arch_(arch), input_dim_(input_dim), num_classes_(num_classes), hidden_(std::move(hidden)) {
  if (input_dim == 0 || num_classes < 2) throw ConfigError("classifier: invalid dimensions");
  if ((arch == Arch::kLinear && !hidden_.empty()) || (arch == Arch::kMlp2 && hidden_.size() != 2)) {
    throw ConfigError("classifier: " + to_string(arch) + " takes " +
                      (arch == Arch::kLinear ? "no" : "two") + " hidden widths");
  }
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), hidden_.begin(), hidden_.end());
  widths.push_back(num_classes);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    if (in == 0 || out == 0) throw ConfigError("classifier: zero layer width");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> unif(-limit, limit);
    ad::Parameter w{"W" + std::to_string(l + 1), {in, out}, std::vector<double>(in * out)};
    for (auto& v : w.values) v = unif(init_rng);
    params_.push_back(std::move(w));
    params_.push_back({"b" + std::to_string(l + 1), {out}, std::vector<double>(out, 0.0)});
  }
}

Classifier Classifier::linear(std::size_t input_dim, std::size_t num_classes, Rng& init_rng) {
  return Classifier(Arch::kLinear, input_dim, num_classes, {}, init_rng);
}

Classifier Classifier::mlp2(std::size_t input_dim, std::size_t num_classes, Rng& init_rng,
                            std::size_t width1, std::size_t width2) {
  return Classifier(Arch::kMlp2, input_dim, num_classes, {width1, width2}, init_rng);
}

std::vector<ad::Tensor> Classifier::bind_parameters(ad::Graph& graph) const {
  std::vector<ad::Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(graph.variable(p.shape, p.values));
  return out;
}

Classifier::Forward Classifier::forward(const ad::Tensor& x,
                                        const std::vector<ad::Tensor>* bound) const {
  const auto& s = x.shape();
  if (s.size() != 2 || s[1] != input_dim_) {
    throw std::invalid_argument("classifier: input " + ad::to_string(s) + ", expected [B," +
                                std::to_string(input_dim_) + "]");
  }
  std::vector<ad::Tensor> p;
  if (bound != nullptr) {
    if (bound->size() != params_.size()) throw std::invalid_argument("classifier: wrong bound parameter count");
    p = *bound;
  } else {
    auto& g = x.graph();
    for (const auto& param : params_) p.push_back(g.constant_view(param.shape, param.values));
  }
  Forward f;
  ad::Tensor h = x;
  const std::size_t layers = params_.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::add_bias(ad::matmul(h, p[2 * l]), p[2 * l + 1]);
    if (l + 1 < layers) h = ad::relu(h);
    f.activations.push_back(h);
  }
  f.logits = h;
  return f;
}

std::vector<double> Classifier::logit_values(std::span<const double> x) const {
  if (x.size() % input_dim_ != 0) {
    throw std::invalid_argument("classifier: input of " + std::to_string(x.size()) +
                                " values is not a multiple of " + std::to_string(input_dim_));
  }
  const std::size_t n = x.size() / input_dim_;
  std::vector<double> out;
  out.reserve(n * num_classes_);
  for (std::size_t start = 0; start < n; start += kPredictChunk) {
    const std::size_t bs = std::min(kPredictChunk, n - start);
    ad::Graph g;
    const auto in = g.constant_view({bs, input_dim_}, x.subspan(start * input_dim_, bs * input_dim_));
    const auto z = logits(in);
    out.insert(out.end(), z.data().begin(), z.data().end());
  }
  return out;
}

std::vector<int> Classifier::predict(std::span<const double> x) const {
  const auto z = logit_values(x);
  const std::size_t n = z.size() / num_classes_;
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = z.begin() + static_cast<std::ptrdiff_t>(i * num_classes_);
    out[i] = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(num_classes_)) - row);
  }
  return out;
}

void Classifier::save(const std::filesystem::path& path) const {
  io::ByteWriter w;
  w.magic("ADVMIXC1");
  w.i32(arch_ == Arch::kLinear ? 0 : 1);
  w.i32(io::checked_i32(input_dim_, "input dim"));
  w.i32(io::checked_i32(num_classes_, "class count"));
  w.i32(io::checked_i32(hidden_.size(), "hidden count"));
  for (std::size_t h : hidden_) w.i32(io::checked_i32(h, "hidden width"));
  for (const auto& p : params_) w.f64s(p.values);
  w.write_file(path);
}

Classifier Classifier::load(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.expect_magic("ADVMIXC1");
  const auto tag = r.i32("architecture tag");
  if (tag != 0 && tag != 1) {
    throw DataError(path.string() + ": unknown architecture tag " + std::to_string(tag) +
                    " at offset " + std::to_string(r.offset() - 4));
  }
  auto dim = [&](const char* what) {
    const auto v = r.i32(what);
    if (v <= 0 || v > (1 << 24)) {
      throw DataError(path.string() + ": invalid " + what + " " + std::to_string(v) +
                      " at offset " + std::to_string(r.offset() - 4));
    }
    return static_cast<std::size_t>(v);
  };
  const std::size_t input = dim("input dim");
  const std::size_t classes = dim("class count");
  const auto n_hidden = r.i32("hidden count");
  if (n_hidden < 0 || n_hidden > 8) throw DataError(path.string() + ": invalid hidden layer count");
  std::vector<std::size_t> hidden;
  for (int i = 0; i < n_hidden; ++i) hidden.push_back(dim("hidden width"));
  Rng dummy(0);
  Classifier c;
  try {
    c = Classifier(tag == 0 ? Arch::kLinear : Arch::kMlp2, input, classes, hidden, dummy);
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  for (auto& p : c.params_) p.values = r.f64s(p.values.size(), p.name.c_str());
  r.expect_end();
  return c;
}

}  // namespace advmix::model
