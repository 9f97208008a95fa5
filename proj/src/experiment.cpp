#include "advmix/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "advmix/errors.hpp"

namespace advmix::exp {

using nlohmann::json;

namespace {

// Reads one JSON object, remembering which keys were consumed so that
// anything left over can be rejected.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  static bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  }

  template <class T>
  void get(const char* key, T& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError(where(key) + ": expected true or false");
        out = v->get<bool>();
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!non_negative_integer(*v)) throw ConfigError(where(key) + ": expected a non-negative integer");
        out = v->get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw ConfigError(where(key) + ": expected a number");
        out = v->get<T>();
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw ConfigError(where(key) + ": expected a string");
        out = v->get<std::string>();
      } else {
        if (!v->is_array()) throw ConfigError(where(key) + ": expected an array");
        for (const auto& e : *v) {
          if (!e.is_number()) throw ConfigError(where(key) + ": expected numbers");
          if constexpr (std::is_unsigned_v<typename T::value_type>) {
            if (!non_negative_integer(e)) throw ConfigError(where(key) + ": expected non-negative integers");
          }
        }
        out = v->get<T>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  template <std::size_t N>
  void get_array(const char* key, std::array<double, N>& out) {
    std::vector<double> v(out.begin(), out.end());
    get(key, v);
    if (v.size() != N) throw ConfigError(where(key) + ": expected " + std::to_string(N) + " numbers");
    std::copy(v.begin(), v.end(), out.begin());
  }

  std::optional<Section> sub(const char* key) {
    const json* v = find(key);
    if (v == nullptr) return std::nullopt;
    return Section(*v, where(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(where(it.key().c_str()) + ": unknown key");
    }
  }

  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json* find(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_color_spec(Section& s, data::ColorSpec& spec, const char* mode_key, const char* weights_key) {
  std::string mode = data::to_string(spec.mode);
  s.get(mode_key, mode);
  try {
    spec.mode = data::parse_color_mode(mode);
  } catch (const std::exception& e) {
    throw ConfigError(s.where(mode_key) + ": " + e.what());
  }
  s.get_array(weights_key, spec.rgb_weights);
}

void read_attack(Section& s, attack::LatentAttackConfig& a) {
  s.get("restarts", a.restarts);
  s.get("steps", a.steps);
  s.get("alpha", a.alpha);
  s.get("epsilon", a.epsilon);
  s.get("simplex", a.simplex);
}

json attack_json(const attack::LatentAttackConfig& a) {
  return {{"restarts", a.restarts}, {"steps", a.steps}, {"alpha", a.alpha},
          {"epsilon", a.epsilon}, {"simplex", a.simplex}};
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  root.get("id", c.id);
  root.get("seed", c.seed);
  if (auto s = root.sub("dataset")) {
    s->get("source", c.dataset.source);
    s->get("mnist_dir", c.dataset.mnist_dir);
    s->get("train_count", c.dataset.train_count);
    s->get("test_count", c.dataset.test_count);
    read_color_spec(*s, c.dataset.train, "mode", "rgb_weights");
    s->get("sigma", c.dataset.train.sigma);
    read_color_spec(*s, c.dataset.test, "test_mode", "test_rgb_weights");
    s->get("test_sigma", c.dataset.test.sigma);
    s->finish();
  }
  if (auto s = root.sub("decoder")) {
    s->get("kind", c.decoder.kind);
    std::string profile = data::to_string(c.decoder.bias_profile);
    s->get("bias_profile", profile);
    try {
      c.decoder.bias_profile = data::parse_bias_profile(profile);
    } catch (const std::exception& e) {
      throw ConfigError(s->where("bias_profile") + ": " + e.what());
    }
    s->get("sampler", c.decoder.sampler);
    if (auto t = s->sub("train_params")) {
      auto& o = c.decoder.train_params;
      t->get("par_dim", o.par_dim);
      t->get("hidden", o.hidden);
      t->get("color_hidden", o.color_hidden);
      t->get("epochs", o.epochs);
      t->get("batch_size", o.batch_size);
      t->get("lr", o.lr);
      t->get("code_l2", o.code_l2);
      t->get("jitter_std", o.jitter_std);
      t->finish();
    }
    s->finish();
  }
  if (auto s = root.sub("encoder")) {
    auto& e = c.encoder.config;
    s->get("init_samples", e.init_samples);
    s->get("iterations", e.iterations);
    s->get("step", e.step);
    s->get("alpha_weights", e.alpha_weights);
    s->get("beta_weights", e.beta_weights);
    s->get("mix_partners", e.mix_partners);
    s->get("use_mix", e.use_mix);
    s->get("feature_epochs", c.encoder.feature_epochs);
    s->get("feature_hidden", c.encoder.feature_hidden);
    s->finish();
  }
  if (auto s = root.sub("model")) {
    std::string arch = model::to_string(c.model.arch);
    s->get("arch", arch);
    try {
      c.model.arch = model::parse_arch(arch);
    } catch (const std::exception& e) {
      throw ConfigError(s->where("arch") + ": " + e.what());
    }
    s->get("hidden", c.model.hidden);
    s->finish();
  }
  if (auto s = root.sub("regime")) {
    auto& r = c.regime;
    std::string name = train::to_string(r.regime);
    s->get("name", name);
    r.regime = train::parse_regime(name);
    s->get("epochs", r.epochs);
    s->get("batch_size", r.batch_size);
    s->get("lr", r.lr);
    s->get("at_epsilon", r.at_epsilon);
    s->get("at_steps", r.at_steps);
    s->get("at_step_size", r.at_step_size);
    s->get("mixup_alpha", r.mixup_alpha);
    s->finish();
  }
  if (auto s = root.sub("attack")) {
    read_attack(*s, c.regime.attack);
    s->finish();
  }
  if (auto s = root.sub("eval")) {
    read_attack(*s, c.eval.attack);
    s->get("grid", c.eval.grid);
    s->get("sampler", c.eval.sampler);
    s->get("robust", c.eval.robust);
    s->get("robust_count", c.eval.robust_count);
    s->get("images", c.eval.images);
    s->finish();
  }
  if (auto s = root.sub("output")) {
    s->get("dir", c.output_dir);
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  const auto& d = dataset;
  const auto& o = decoder.train_params;
  const auto& e = encoder.config;
  json eval_j = attack_json(eval.attack);
  eval_j["grid"] = eval.grid;
  eval_j["sampler"] = eval.sampler;
  eval_j["robust"] = eval.robust;
  eval_j["robust_count"] = eval.robust_count;
  eval_j["images"] = eval.images;
  return {
      {"id", id},
      {"seed", seed},
      {"dataset",
       {{"source", d.source}, {"mnist_dir", d.mnist_dir}, {"train_count", d.train_count},
        {"test_count", d.test_count}, {"mode", data::to_string(d.train.mode)}, {"sigma", d.train.sigma},
        {"rgb_weights", d.train.rgb_weights}, {"test_mode", data::to_string(d.test.mode)},
        {"test_sigma", d.test.sigma}, {"test_rgb_weights", d.test.rgb_weights}}},
      {"decoder",
       {{"kind", decoder.kind},
        {"bias_profile", data::to_string(decoder.bias_profile)},
        {"sampler", decoder.sampler},
        {"train_params",
         {{"par_dim", o.par_dim}, {"hidden", o.hidden}, {"color_hidden", o.color_hidden},
          {"epochs", o.epochs}, {"batch_size", o.batch_size}, {"lr", o.lr}, {"code_l2", o.code_l2},
          {"jitter_std", o.jitter_std}}}}},
      {"encoder",
       {{"init_samples", e.init_samples}, {"iterations", e.iterations}, {"step", e.step},
        {"alpha_weights", e.alpha_weights}, {"beta_weights", e.beta_weights},
        {"mix_partners", e.mix_partners}, {"use_mix", e.use_mix},
        {"feature_epochs", encoder.feature_epochs}, {"feature_hidden", encoder.feature_hidden}}},
      {"model", {{"arch", model::to_string(model.arch)}, {"hidden", model.hidden}}},
      {"regime",
       {{"name", train::to_string(regime.regime)}, {"epochs", regime.epochs},
        {"batch_size", regime.batch_size}, {"lr", regime.lr}, {"at_epsilon", regime.at_epsilon},
        {"at_steps", regime.at_steps}, {"at_step_size", regime.at_step_size},
        {"mixup_alpha", regime.mixup_alpha}}},
      {"attack", attack_json(regime.attack)},
      {"eval", eval_j},
      {"output", {{"dir", output_dir}}},
  };
}

// The output location does not change results, so it is left out.
std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j.erase("output");
  return hex16(fnv1a64(j.dump()));
}

void ExperimentConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "mnist")
    throw ConfigError("dataset.source: expected 'synthetic' or 'mnist', got '" + dataset.source + "'");
  if (dataset.source == "mnist" && dataset.mnist_dir.empty())
    throw ConfigError("dataset.mnist_dir: required when dataset.source is 'mnist'");
  if (dataset.train_count < 1 || dataset.test_count < 1)
    throw ConfigError("dataset: train_count and test_count must be >= 1");
  dataset.train.validate();
  dataset.test.validate();
  if (decoder.kind != "procedural" && decoder.kind != "learned")
    throw ConfigError("decoder.kind: expected 'procedural' or 'learned', got '" + decoder.kind + "'");
  if (decoder.sampler != "train_colors" && decoder.sampler != "uniform_box" && decoder.sampler != "rgb")
    throw ConfigError("decoder.sampler: expected 'train_colors', 'uniform_box' or 'rgb'");
  if (encoder.feature_hidden.size() != 2) throw ConfigError("encoder.feature_hidden: expected two widths");
  encoder.config.validate(encoder.feature_hidden.size() + 1);
  if (model.arch == model::Arch::kMlp2 && model.hidden.size() != 2)
    throw ConfigError("model.hidden: mlp2 needs two widths");
  if (model.arch == model::Arch::kLinear && !model.hidden.empty())
    throw ConfigError("model.hidden: must be empty for the linear model");
  regime.validate();
  regime.attack.validate();
  eval.attack.validate();
  if (eval.grid != "cube" && eval.grid != "rgb") throw ConfigError("eval.grid: expected 'cube' or 'rgb'");
  if (eval.sampler != "uniform_box" && eval.sampler != "rgb")
    throw ConfigError("eval.sampler: expected 'uniform_box' or 'rgb'");
  if (output_dir.empty()) throw ConfigError("output.dir: must not be empty");
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

void echo_config(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto j = cfg.to_json();
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw DataError("cannot write '" + (dir / "config.json").string() + "'");
  out << j.dump(2) << '\n';
  std::ofstream h(dir / "config.hash", std::ios::trunc);
  h << cfg.hash() << '\n';
}

// ---------------------------------------------------------------------------

DataBundle build_data(const ExperimentConfig& cfg) {
  auto rng = make_rng(cfg.seed, "dataset");
  data::GrayDataset train_gray, test_gray;
  if (cfg.dataset.source == "mnist") {
    const std::filesystem::path dir = cfg.dataset.mnist_dir;
    train_gray = data::load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    test_gray = data::load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    if (train_gray.size() < cfg.dataset.train_count || test_gray.size() < cfg.dataset.test_count)
      throw DataError("MNIST files hold fewer images than dataset.train_count / test_count");
    train_gray = data::take(train_gray, cfg.dataset.train_count);
    test_gray = data::take(test_gray, cfg.dataset.test_count);
  } else {
    train_gray = data::synthesize_digits(cfg.dataset.train_count, rng);
    test_gray = data::synthesize_digits(cfg.dataset.test_count, rng);
  }
  DataBundle b;
  b.train_glyphs = std::make_shared<const data::GrayDataset>(data::pad_to(train_gray, data::kImageSize));
  b.test_glyphs = std::make_shared<const data::GrayDataset>(data::pad_to(test_gray, data::kImageSize));
  auto train_rng = make_rng(cfg.seed, "dataset.train-colors");
  auto test_rng = make_rng(cfg.seed, "dataset.test-colors");
  b.train = data::colorize(*b.train_glyphs, cfg.dataset.train, train_rng);
  b.test = data::colorize(*b.test_glyphs, cfg.dataset.test, test_rng);
  return b;
}

void save_data(const DataBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  data::write_idx(*b.train_glyphs, dir / "train-glyphs.idx3", dir / "train-labels.idx1");
  data::write_idx(*b.test_glyphs, dir / "test-glyphs.idx3", dir / "test-labels.idx1");
  data::save_colored(b.train, dir / "train.advmixx");
  data::save_colored(b.test, dir / "test.advmixx");
}

DataBundle load_data(const std::filesystem::path& dir) {
  for (const char* f : {"train-glyphs.idx3", "test-glyphs.idx3", "train.advmixx", "test.advmixx"}) {
    if (!std::filesystem::exists(dir / f))
      throw DataError("missing '" + (dir / f).string() + "'; run `advmix build-data` with the same config first");
  }
  DataBundle b;
  b.train_glyphs = std::make_shared<const data::GrayDataset>(
      data::load_idx(dir / "train-glyphs.idx3", dir / "train-labels.idx1"));
  b.test_glyphs = std::make_shared<const data::GrayDataset>(
      data::load_idx(dir / "test-glyphs.idx3", dir / "test-labels.idx1"));
  b.train = data::load_colored(dir / "train.advmixx");
  b.test = data::load_colored(dir / "test.advmixx");
  return b;
}

gen::ColorSampler make_sampler(const std::string& name, const std::vector<data::ColoredExample>& colored) {
  if (name == "uniform_box") return gen::ColorSampler::uniform_box();
  if (name == "rgb") return gen::ColorSampler::discrete({data::kRed, data::kGreen, data::kBlue});
  if (name != "train_colors") throw ConfigError("unknown sampler '" + name + "'");
  // Empirical distribution of the recorded colors, duplicates merged.
  std::map<data::Color, double> counts;
  for (const auto& ex : colored) {
    if (!ex.provenance) throw DataError("train_colors sampler: example without provenance");
    counts[ex.provenance->color] += 1.0;
  }
  if (counts.empty()) throw DataError("train_colors sampler: no examples");
  std::vector<data::Color> colors;
  std::vector<double> weights;
  for (const auto& [c, n] : counts) {
    colors.push_back(c);
    weights.push_back(n);
  }
  return gen::ColorSampler::discrete(std::move(colors), std::move(weights));
}

gen::LearnedDecoder train_decoder(const ExperimentConfig& cfg, const DataBundle& bundle,
                                  gen::LearnedDecoder::TrainResult* result) {
  auto subset_rng = make_rng(cfg.seed, "decoder.subset");
  const auto subset = data::decoder_bias_subset(bundle.train, cfg.decoder.bias_profile, subset_rng);
  auto rng = make_rng(cfg.seed, "decoder");
  return gen::LearnedDecoder::train(subset, cfg.decoder.train_params, rng, result);
}

inv::FeatureNet train_feature_net(const ExperimentConfig& cfg, const DataBundle& bundle) {
  auto init_rng = make_rng(cfg.seed, "encoder.features.init");
  const auto& h = cfg.encoder.feature_hidden;
  auto net = model::Classifier::mlp2(data::kImageSize * data::kImageSize, data::kNumClasses, init_rng,
                                     h[0], h[1]);
  auto images = train::to_image_set(bundle.train);
  images.pixels = inv::FeatureNet::profile_values(images.pixels, images.size(), data::kChannels);
  images.dim = data::kImageSize * data::kImageSize;
  train::RegimeConfig rc;
  rc.epochs = cfg.encoder.feature_epochs;
  train::TrainData td;
  td.images = &images;
  auto rng = make_rng(cfg.seed, "encoder.features");
  return inv::FeatureNet(train::train(rc, td, std::move(net), rng).model);
}

inv::LatentDataset encode_training_set(const ExperimentConfig& cfg, const gen::LearnedDecoder& dec,
                                       const inv::FeatureNet& net, const DataBundle& bundle) {
  constexpr std::size_t kChunk = 200;
  const auto base = derive_seed(cfg.seed, "encoder");
  const auto images = train::to_image_set(bundle.train);
  inv::LatentDataset out;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - start);
    std::vector<std::uint64_t> seeds(n);
    for (std::size_t i = 0; i < n; ++i) seeds[i] = derive_seed(base, static_cast<std::uint64_t>(start + i));
    const std::span<const double> chunk(images.pixels.data() + start * images.dim, n * images.dim);
    for (auto& r : inv::encode_batch(dec, net, chunk, cfg.encoder.config, seeds)) {
      out.latents.push_back(std::move(r.z));
    }
    for (std::size_t i = 0; i < n; ++i) out.labels.push_back(images.labels[start + i]);
  }
  return out;
}

model::Classifier init_classifier(const ExperimentConfig& cfg, std::size_t input_dim) {
  auto rng = make_rng(cfg.seed, "model.init");
  return model::Classifier(cfg.model.arch, input_dim, data::kNumClasses, cfg.model.hidden, rng);
}

train::TrainResult train_classifier(const ExperimentConfig& cfg, const DataBundle& bundle,
                                    const gen::Decoder* dec, const inv::LatentDataset* latents) {
  const auto images = train::to_image_set(bundle.train);
  train::TrainData td;
  td.images = &images;
  if (train::uses_decoder(cfg.regime.regime)) {
    if (dec == nullptr || latents == nullptr)
      throw ConfigError("regime " + train::to_string(cfg.regime.regime) + " needs a decoder and latents");
    td.decoder = dec;
    td.latents = latents;
  }
  auto rng = make_rng(cfg.seed, "train");
  auto regime = cfg.regime;
  regime.attack.seed = derive_seed(cfg.seed, "train.attack");
  return train::train(regime, td, init_classifier(cfg, images.dim), rng);
}

Evaluation evaluate(const ExperimentConfig& cfg, const model::Classifier& f, const DataBundle& bundle) {
  const auto images = train::to_image_set(bundle.test);
  if (images.size() == 0) throw DataError("evaluate: empty test set");
  Evaluation out;
  auto& rep = out.report;
  rep.clean_accuracy = eval::eval_clean(f, images.pixels, images.labels);
  rep.per_class_clean = eval::per_class_accuracy(f, images.pixels, images.labels);

  const gen::ProceduralGlyphDecoder dec(bundle.test_glyphs, make_sampler(cfg.eval.sampler, bundle.test));
  const auto latents = inv::invert_all(dec, bundle.test);
  out.test_latents = latents.latents;

  const auto grid = cfg.eval.grid == "rgb" ? eval::rgb_grid() : eval::cube_grid(5);
  const auto env = attack::environment_worst_case(f, dec, latents.latents, latents.labels, grid);
  rep.env_risks = env.risks;
  rep.env_max = env.max;
  rep.invariance_rate = eval::eval_invariance(f, dec, latents.latents, grid);

  rep.robust_accuracy = std::numeric_limits<double>::quiet_NaN();
  if (cfg.eval.robust) {
    const std::size_t n = cfg.eval.robust_count == 0 ? images.size() : std::min(cfg.eval.robust_count, images.size());
    auto atk = cfg.eval.attack;
    atk.seed = derive_seed(cfg.seed, "eval.attack");
    out.robust = eval::eval_robust(f, dec, std::span(latents.latents).first(n),
                                   std::span(latents.labels).first(n),
                                   std::span(images.pixels).first(n * images.dim), atk);
    rep.robust_accuracy = out.robust.robust_accuracy;
    rep.mean_restarts_to_success = out.robust.mean_restarts_to_success;
    rep.mean_steps_to_success = out.robust.mean_steps_to_success;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Presets

double PresetResult::value(const std::string& experiment_id, const std::string& metric) const {
  for (const auto& r : rows)
    if (r.experiment_id == experiment_id && r.metric == metric) return r.value;
  return std::numeric_limits<double>::quiet_NaN();
}

std::vector<std::string> preset_names() {
  return {"fig5-sigma-sweep", "table1-decoder-bias", "table2-rgb-linear", "fig3-toy"};
}

namespace {

const std::vector<train::Regime> kAllRegimes{train::Regime::kNominal, train::Regime::kAt,
                                             train::Regime::kMixup, train::Regime::kRandMix,
                                             train::Regime::kAdvMix};

std::string fmt_level(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct RowSink {
  std::vector<eval::ReportRow>* rows;
  std::uint64_t seed;
  std::string hash;
  void add(const std::string& id, const std::string& metric, double v) const {
    rows->push_back({id, metric, v, seed, hash});
  }
};

void say(const Progress& p, const std::string& msg) {
  if (p) p(msg);
}

void add_eval_rows(const RowSink& sink, const std::string& id, const Evaluation& ev,
                   const train::TrainResult& tr) {
  const auto& r = ev.report;
  sink.add(id, "clean_accuracy", r.clean_accuracy);
  if (!std::isnan(r.robust_accuracy)) {
    sink.add(id, "robust_accuracy", r.robust_accuracy);
    sink.add(id, "robust_subset_clean_accuracy", ev.robust.clean_accuracy);
  }
  sink.add(id, "invariance_rate", r.invariance_rate);
  sink.add(id, "env_risk_max", r.env_max);
  if (!tr.log.epochs.empty()) {
    sink.add(id, "train_accuracy", tr.log.epochs.back().train_accuracy);
    if (tr.log.epochs.back().attack_success_rate >= 0.0)
      sink.add(id, "train_attack_success_rate", tr.log.epochs.back().attack_success_rate);
  }
}

// Trains and evaluates every regime on one dataset. Decoder-based regimes
// use `dec` and `latents`; the others train on the images directly.
void run_regimes(const ExperimentConfig& cfg, const DataBundle& bundle, const gen::Decoder& dec,
                 const inv::LatentDataset& latents, const std::vector<train::Regime>& regimes,
                 const std::string& prefix, const RowSink& sink, const Progress& progress,
                 const std::function<bool(train::Regime)>& robust_for = {}) {
  for (auto regime : regimes) {
    auto c = cfg;
    c.regime.regime = regime;
    if (robust_for) c.eval.robust = robust_for(regime);
    const std::string id = prefix + "/" + train::to_string(regime);
    say(progress, "train " + id);
    const auto tr = train_classifier(c, bundle, &dec, &latents);
    say(progress, "eval " + id);
    const auto ev = evaluate(c, tr.model, bundle);
    add_eval_rows(sink, id, ev, tr);
  }
}

void run_fig5(const ExperimentConfig& base, const RowSink& sink, const Progress& progress) {
  for (double sigma : {0.0, 0.1, 0.3}) {
    auto cfg = base;
    cfg.dataset.train.sigma = sigma;
    say(progress, "fig5: sigma=" + fmt_level(sigma) + " data");
    const auto bundle = build_data(cfg);
    const gen::ProceduralGlyphDecoder dec(bundle.train_glyphs, make_sampler(cfg.decoder.sampler, bundle.train));
    const auto latents = inv::invert_all(dec, bundle.train);
    run_regimes(cfg, bundle, dec, latents, kAllRegimes, "sigma=" + fmt_level(sigma), sink, progress,
                [&](train::Regime) { return base.eval.robust && sigma == 0.0; });
  }
}

void run_table1(const ExperimentConfig& base, const RowSink& sink, const Progress& progress) {
  auto cfg = base;
  say(progress, "table1: data");
  const auto bundle = build_data(cfg);
  say(progress, "table1: feature net");
  const auto net = train_feature_net(cfg, bundle);
  // The image-only regimes do not see the decoder; train them once.
  const gen::ProceduralGlyphDecoder unused(bundle.train_glyphs, gen::ColorSampler::uniform_box());
  const inv::LatentDataset none;
  std::vector<eval::ReportRow> shared;
  RowSink shared_sink{&shared, sink.seed, sink.hash};
  run_regimes(cfg, bundle, unused, none,
              {train::Regime::kNominal, train::Regime::kAt, train::Regime::kMixup}, "shared",
              shared_sink, progress);
  for (auto profile : {data::BiasProfile::kUnbiased, data::BiasProfile::kLessBiased,
                       data::BiasProfile::kMoreBiased}) {
    cfg.decoder.bias_profile = profile;
    const std::string prefix = "profile=" + data::to_string(profile);
    say(progress, "table1: " + prefix + " decoder");
    const auto dec = train_decoder(cfg, bundle);
    sink.add(prefix, "decoder_train_rmse", dec.train_rmse());
    say(progress, "table1: " + prefix + " encode");
    const auto latents = encode_training_set(cfg, dec, net, bundle);
    double se = 0.0;
    const auto recon = gen::decode_batch(dec, latents.latents);
    const auto images = train::to_image_set(bundle.train);
    for (std::size_t i = 0; i < recon.size(); ++i) se += (recon[i] - images.pixels[i]) * (recon[i] - images.pixels[i]);
    sink.add(prefix, "encode_rmse", std::sqrt(se / static_cast<double>(recon.size())));
    for (const auto& r : shared) {
      const auto regime = r.experiment_id.substr(r.experiment_id.find('/'));
      sink.add(prefix + regime, r.metric, r.value);
    }
    run_regimes(cfg, bundle, dec, latents, {train::Regime::kRandMix, train::Regime::kAdvMix}, prefix, sink,
                progress);
  }
}

void run_table2(const ExperimentConfig& base, const RowSink& sink, const Progress& progress) {
  const std::vector<std::pair<std::string, std::array<double, 3>>> levels{
      {"unbiased", {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}},
      {"red99", {0.99, 0.005, 0.005}},
      {"red99.9", {0.999, 0.0005, 0.0005}}};
  for (const auto& [name, weights] : levels) {
    auto cfg = base;
    cfg.dataset.train.rgb_weights = weights;
    const std::string prefix = "bias=" + name;
    say(progress, "table2: " + prefix + " data");
    const auto bundle = build_data(cfg);
    say(progress, "table2: " + prefix + " decoder");
    const auto dec = train_decoder(cfg, bundle);
    sink.add(prefix, "decoder_train_rmse", dec.train_rmse());
    say(progress, "table2: " + prefix + " feature net");
    const auto net = train_feature_net(cfg, bundle);
    say(progress, "table2: " + prefix + " encode");
    const auto latents = encode_training_set(cfg, dec, net, bundle);
    run_regimes(cfg, bundle, dec, latents, kAllRegimes, prefix, sink, progress);
  }
}

// Standardized distance to the nearest toy cluster center.
double toy_cluster_distance(double x1, double x2) {
  double best = std::numeric_limits<double>::infinity();
  for (double c1 : {0.0, 10.0})
    for (double c2 : {0.0, 20.0}) {
      const double a = (x1 - c1) / gen::kToyX1Std, b = (x2 - c2) / gen::kToyX2Std;
      best = std::min(best, std::sqrt(a * a + b * b));
    }
  return best;
}

void write_points(const std::filesystem::path& path, const std::vector<std::array<double, 3>>& pts) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "x1,x2,label\n";
  char buf[128];
  for (const auto& p : pts) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p[0], p[1], p[2]);
    out << buf;
  }
}

void run_fig3(const ExperimentConfig& cfg, const RowSink& sink, const std::filesystem::path& out_dir,
                      const Progress& progress) {
  auto data_rng = make_rng(cfg.seed, "dataset");
  const auto toy = data::make_toy(cfg.dataset.train_count, data_rng);
  const gen::ToyDecoder dec;
  train::ImageSet images;
  images.dim = 2;
  inv::LatentDataset latents;
  for (const auto& p : toy.points) {
    images.pixels.insert(images.pixels.end(), {p.x1, p.x2});
    images.labels.push_back(p.label);
    latents.latents.push_back({{p.z_par}, {p.z_perp}});
    latents.labels.push_back(p.label);
  }
  train::TrainData td;
  td.images = &images;
  td.latents = &latents;
  td.decoder = &dec;

  std::vector<std::array<double, 3>> mixup_pts, advmix_pts;
  // mixup: pairs from a random permutation of the observed points.
  {
    auto rng = make_rng(cfg.seed, "toy.mixup");
    std::vector<std::size_t> perm(images.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> xb;
    std::vector<int> yb;
    for (auto j : perm) {
      xb.insert(xb.end(), {images.pixels[2 * j], images.pixels[2 * j + 1]});
      yb.push_back(images.labels[j]);
    }
    const auto m = train::batch_mixup(images.pixels, images.labels, xb, yb, 2, 2, cfg.regime.mixup_alpha, rng);
    for (std::size_t i = 0; i < images.size(); ++i)
      mixup_pts.push_back({m.x[2 * i], m.x[2 * i + 1], m.y_soft[2 * i + 1]});
  }
  // AdvMix: train a linear model with the latent attack, then attack every
  // point against the final snapshot.
  {
    say(progress, "fig3: advmix training");
    auto c = cfg;
    c.regime.regime = train::Regime::kAdvMix;
    auto init_rng = make_rng(cfg.seed, "model.init");
    auto rng = make_rng(cfg.seed, "train");
    c.regime.attack.seed = derive_seed(cfg.seed, "train.attack");
    const auto tr = train::train(c.regime, td, model::Classifier::linear(2, 2, init_rng), rng);
    sink.add("advmix", "train_accuracy", tr.log.epochs.back().train_accuracy);
    std::vector<std::uint64_t> seeds(latents.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = derive_seed(c.regime.attack.seed, i);
    const auto aug = train::batch_advmix(latents.latents, latents.labels, dec, tr.model, c.regime.attack, seeds);
    for (std::size_t i = 0; i < aug.labels.size(); ++i)
      advmix_pts.push_back({aug.images[2 * i], aug.images[2 * i + 1], static_cast<double>(aug.labels[i])});
  }
  std::size_t adv_within = 0, mix_far = 0;
  for (const auto& p : advmix_pts) adv_within += toy_cluster_distance(p[0], p[1]) <= 4.0;
  for (const auto& p : mixup_pts) mix_far += toy_cluster_distance(p[0], p[1]) > 4.0;
  sink.add("advmix", "within_4std_fraction", static_cast<double>(adv_within) / static_cast<double>(advmix_pts.size()));
  sink.add("mixup", "beyond_4std_fraction", static_cast<double>(mix_far) / static_cast<double>(mixup_pts.size()));
  std::filesystem::create_directories(out_dir);
  write_points(out_dir / "fig3-toy-mixup-points.csv", mixup_pts);
  write_points(out_dir / "fig3-toy-advmix-points.csv", advmix_pts);
  {
    std::vector<std::array<double, 3>> orig;
    for (const auto& p : toy.points) orig.push_back({p.x1, p.x2, static_cast<double>(p.label)});
    write_points(out_dir / "fig3-toy-points.csv", orig);
  }
}

// Trimmed inversion schedule so the learned-decoder presets fit the runtime budget.
void learned_encoder(ExperimentConfig& c) {
  c.encoder.config.iterations = 100;
  c.encoder.config.mix_partners = 2;
}

}  // namespace

ExperimentConfig preset_config(const std::string& name) {
  ExperimentConfig c;
  c.id = name;
  c.output_dir = "out/" + name;
  c.dataset.train.mode = data::ColorMode::kGaussianPalette;
  c.dataset.test.mode = data::ColorMode::kUniformRandom;
  if (name == "fig5-sigma-sweep") {
    c.decoder.kind = "procedural";
    c.decoder.sampler = "train_colors";
    c.eval.robust_count = 500;
  } else if (name == "table1-decoder-bias") {
    c.decoder.kind = "learned";
    learned_encoder(c);
    c.eval.robust = false;
  } else if (name == "table2-rgb-linear") {
    c.dataset.train.mode = data::ColorMode::kRgbRestricted;
    c.dataset.test.mode = data::ColorMode::kRgbRestricted;
    c.decoder.kind = "learned";
    learned_encoder(c);
    c.model.arch = model::Arch::kLinear;
    c.model.hidden.clear();
    c.regime.epochs = 10;
    c.regime.lr = 3e-3;
    c.regime.attack.simplex = true;
    c.regime.attack.epsilon = 1.0;
    c.regime.attack.alpha = 0.25;
    c.eval.attack.simplex = true;
    c.eval.attack.epsilon = 1.0;
    c.eval.attack.alpha = 0.25;
    c.eval.grid = "rgb";
    c.eval.sampler = "rgb";
  } else if (name == "fig3-toy") {
    c.dataset.train_count = 200;
    c.model.arch = model::Arch::kLinear;
    c.model.hidden.clear();
    c.regime.epochs = 20;
    c.regime.batch_size = 20;
    c.regime.lr = 0.05;
    c.regime.attack.epsilon = 10.0;
    c.regime.attack.alpha = 1.0;
    c.eval.robust = false;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected fig5-sigma-sweep, table1-decoder-bias, "
                      "table2-rgb-linear or fig3-toy)");
  }
  c.validate();
  return c;
}

PresetResult run_preset(const std::string& name, const ExperimentConfig& base,
                        const std::filesystem::path& out_dir, const Progress& progress) {
  base.validate();
  PresetResult result;
  const RowSink sink{&result.rows, base.seed, base.hash()};
  if (name == "fig5-sigma-sweep") run_fig5(base, sink, progress);
  else if (name == "table1-decoder-bias") run_table1(base, sink, progress);
  else if (name == "table2-rgb-linear") run_table2(base, sink, progress);
  else if (name == "fig3-toy") run_fig3(base, sink, out_dir, progress);
  else preset_config(name);  // throws the unknown-preset error
  for (auto& r : result.rows) r.experiment_id = name + "/" + r.experiment_id;
  echo_config(base, out_dir);
  eval::write_report_csv(result.rows, out_dir / (name + ".csv"));
  return result;
}

}  // namespace advmix::exp
