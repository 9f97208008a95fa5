// Acceptance suite: one PASS/FAIL line per criterion. Thresholds are fixed;
// a failing criterion is reported, never relaxed.
//
//   advmix_acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "advmix/experiment.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"

using namespace advmix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string pct(double v) { return fmt("%.1f", 100.0 * v); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / "advmix_acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void progress(const std::string& msg) { std::fprintf(stderr, "  [%s]\n", msg.c_str()); }

// Preset runs shared between criteria; each is computed at most once.
struct Runs {
  std::optional<exp::PresetResult> fig5, table1, fig3;
  double fig5_seconds = 0.0;
  std::map<std::uint64_t, exp::PresetResult> table2;
  std::map<std::uint64_t, double> table2_seconds;

  template <class F>
  static double timed(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  const exp::PresetResult& get_fig5() {
    if (!fig5) {
      fig5_seconds = timed([&] {
        fig5 = exp::run_preset("fig5-sigma-sweep", exp::preset_config("fig5-sigma-sweep"), scratch("fig5"), progress);
      });
    }
    return *fig5;
  }
  const exp::PresetResult& get_table2(std::uint64_t seed) {
    if (!table2.count(seed)) {
      auto cfg = exp::preset_config("table2-rgb-linear");
      cfg.seed = seed;
      table2_seconds[seed] = timed([&] {
        table2[seed] = exp::run_preset("table2-rgb-linear", cfg, scratch("table2-" + std::to_string(seed)), progress);
      });
    }
    return table2.at(seed);
  }
  const exp::PresetResult& get_table1() {
    if (!table1) table1 = exp::run_preset("table1-decoder-bias", exp::preset_config("table1-decoder-bias"), scratch("table1"), progress);
    return *table1;
  }
  const exp::PresetResult& get_fig3() {
    if (!fig3) fig3 = exp::run_preset("fig3-toy", exp::preset_config("fig3-toy"), scratch("fig3"), progress);
    return *fig3;
  }
};

// ---------------------------------------------------------------------------

std::vector<double> randn(std::size_t n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Outcome gradient_oracle(Runs&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_rel = 0.0, worst_abs = 0.0;
  std::size_t failed = 0;
  Rng rng(1001);
  std::uniform_int_distribution<std::size_t> width(2, 6), depth(1, 3), act(0, 1), loss(0, 1);
  for (int net = 0; net < 50; ++net) {
    const std::size_t batch = width(rng), classes = width(rng), layers = depth(rng);
    std::vector<std::size_t> dims{width(rng)};
    for (std::size_t l = 1; l < layers; ++l) dims.push_back(width(rng));
    dims.push_back(classes);
    std::vector<std::size_t> acts;
    for (std::size_t l = 0; l + 1 < layers; ++l) acts.push_back(act(rng));
    const bool soft = loss(rng) == 1;
    std::vector<int> labels(batch);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
    for (auto& y : labels) y = pick(rng);
    std::vector<double> targets(batch * classes);
    for (std::size_t b = 0; b < batch; ++b) {
      double s = 0.0;
      for (std::size_t c = 0; c < classes; ++c) s += targets[b * classes + c] = std::exp(randn(1, rng)[0]);
      for (std::size_t c = 0; c < classes; ++c) targets[b * classes + c] /= s;
    }
    std::vector<testing::GradInput> inputs{{{batch, dims[0]}, randn(batch * dims[0], rng)}};
    for (std::size_t l = 0; l < layers; ++l) {
      inputs.push_back({{dims[l], dims[l + 1]}, randn(dims[l] * dims[l + 1], rng, 0.7)});
      inputs.push_back({{dims[l + 1]}, randn(dims[l + 1], rng, 0.3)});
    }
    auto build = [&](ad::Graph&, const std::vector<ad::Tensor>& t) {
      ad::Tensor h = t[0];
      for (std::size_t l = 0; l < layers; ++l) {
        h = ad::add_bias(ad::matmul(h, t[1 + 2 * l]), t[2 + 2 * l]);
        if (l + 1 < layers) h = acts[l] == 0 ? ad::relu(h) : ad::sigmoid(h);
      }
      return soft ? ad::soft_cross_entropy(h, targets) : ad::cross_entropy(h, labels);
    };
    const auto r = testing::gradcheck(build, inputs);
    worst_rel = std::max(worst_rel, r.max_rel_error);
    worst_abs = std::max(worst_abs, r.max_abs_error);
    failed += !r.ok;
  }

  // d/d z_perp of cross-entropy through the procedural decoder and a classifier.
  auto bank = testing::glyph_bank(10, 1002);
  const gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  Rng init(1003);
  const auto f = model::Classifier::mlp2(dec.image_shape().size(), 10, init, 16, 8);
  for (int k = 0; k < 5; ++k) {
    const int label = bank->labels[static_cast<std::size_t>(k)];
    std::uniform_real_distribution<double> u(0.05, 0.95);
    auto build = [&](ad::Graph& g, const std::vector<ad::Tensor>& t) {
      const auto img = dec.render(g.constant({1, 1}, {static_cast<double>(k)}), t[0]);
      return ad::cross_entropy(f.logits(img), std::vector<int>{label});
    };
    const auto r = testing::gradcheck(build, {{{1, 3}, {u(rng), u(rng), u(rng)}}});
    worst_rel = std::max(worst_rel, r.max_rel_error);
    worst_abs = std::max(worst_abs, r.max_abs_error);
    failed += !r.ok;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {failed == 0 && worst_rel <= 1e-4 && secs <= 30.0,
          "50 nets + 5 decode-classifier composites, max rel err " + fmt("%.2e", worst_rel) + ", max abs err " +
              fmt("%.2e", worst_abs) + ", " + fmt("%.1f", secs) + " s (limit 1e-4, 30 s)"};
}

Outcome attack_oracle(Runs&) {
  const auto t0 = std::chrono::steady_clock::now();
  auto bank = testing::glyph_bank(400, 2001);
  const auto f = testing::color_reliant_linear(*bank, 2, 2002);
  const gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  std::size_t agree = 0, dominated = 0, successes = 0;
  const std::size_t cases = 200;
  for (std::size_t i = 0; i < cases; ++i) {
    attack::LatentAttackConfig cfg;
    cfg.restarts = 5;
    cfg.steps = 10;
    cfg.epsilon = 0.25;
    cfg.alpha = 0.0625;
    cfg.seed = 3000 + i;
    const auto c = testing::grid_oracle(f, dec, {{static_cast<double>(i)}, {0, 0, 0}}, bank->labels[i], cfg);
    agree += c.attack_success == c.oracle_success;
    dominated += c.oracle_best >= c.attack_loss - c.slack;
    successes += c.attack_success;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double rate = static_cast<double>(agree) / cases;
  return {rate >= 0.95 && dominated == cases && secs <= 120.0,
          "agreement " + pct(rate) + "% (" + std::to_string(successes) + " attack successes), grid best within slack on " +
              std::to_string(dominated) + "/" + std::to_string(cases) + ", " + fmt("%.1f", secs) + " s"};
}

Outcome table2_bias(Runs& runs) {
  std::size_t passing = 0;
  std::ostringstream detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    const auto& r = runs.get_table2(seed);
    const double ru = r.value("table2-rgb-linear/bias=unbiased/randmix", "clean_accuracy");
    const double rr = r.value("table2-rgb-linear/bias=red99.9/randmix", "clean_accuracy");
    const double au = r.value("table2-rgb-linear/bias=unbiased/advmix", "clean_accuracy");
    const double ar = r.value("table2-rgb-linear/bias=red99.9/advmix", "clean_accuracy");
    const double secs = runs.table2_seconds.at(seed);
    const bool ok = ru - rr >= 0.20 && au - ar <= 0.05 && ar - rr >= 0.15 && secs <= 600.0;
    passing += ok;
    detail << "seed " << seed << ": randmix " << pct(ru) << "->" << pct(rr) << ", advmix " << pct(au) << "->" << pct(ar)
           << ", " << fmt("%.0f", secs) << " s " << (ok ? "ok" : "no") << "; ";
  }
  detail << passing << "/3 seeds";
  return {passing >= 2, detail.str()};
}

Outcome fig5_sweep(Runs& runs) {
  const auto& r = runs.get_fig5();
  auto acc = [&](const char* sigma, const char* regime) {
    return r.value(std::string("fig5-sigma-sweep/sigma=") + sigma + "/" + regime, "clean_accuracy");
  };
  std::ostringstream detail;
  bool ok = runs.fig5_seconds <= 900.0;
  std::size_t inversions = 0;
  for (const char* regime : {"randmix", "advmix"}) {
    std::vector<double> gaps;
    for (const char* s : {"0", "0.1", "0.3"}) gaps.push_back(acc(s, regime) - acc(s, "nominal"));
    ok = ok && gaps[0] >= 0.05;
    for (std::size_t k = 1; k < gaps.size(); ++k) inversions += gaps[k] > gaps[k - 1];
    detail << regime << " gap " << pct(gaps[0]) << "/" << pct(gaps[1]) << "/" << pct(gaps[2]) << "; ";
  }
  ok = ok && inversions <= 1;
  detail << inversions << " inversion(s), " << fmt("%.0f", runs.fig5_seconds) << " s";
  return {ok, detail.str()};
}

Outcome table1_bias(Runs& runs) {
  const auto& r = runs.get_table1();
  const double a = r.value("table1-decoder-bias/profile=more_biased/advmix", "clean_accuracy");
  const double b = r.value("table1-decoder-bias/profile=more_biased/randmix", "clean_accuracy");
  return {a > b, "more_biased: advmix " + pct(a) + "% vs randmix " + pct(b) + "%"};
}

Outcome robustness_gap(Runs& runs) {
  const auto& r = runs.get_fig5();
  const double adv = r.value("fig5-sigma-sweep/sigma=0/advmix", "robust_accuracy");
  const double nom = r.value("fig5-sigma-sweep/sigma=0/nominal", "robust_accuracy");
  // robust <= clean over every report that has a robust accuracy.
  std::size_t reports = 0, violations = 0;
  auto scan = [&](const exp::PresetResult& res) {
    for (const auto& row : res.rows) {
      if (row.metric != "robust_accuracy" || std::isnan(row.value)) continue;
      ++reports;
      double clean = res.value(row.experiment_id, "robust_subset_clean_accuracy");
      if (std::isnan(clean)) clean = res.value(row.experiment_id, "clean_accuracy");
      violations += row.value > clean;
    }
  };
  scan(r);
  for (const auto& [seed, res] : runs.table2) scan(res);
  return {adv - nom >= 0.30 && violations == 0 && reports > 0,
          "sigma=0 robust: advmix " + pct(adv) + "% vs nominal " + pct(nom) + "%; robust <= clean on " +
              std::to_string(reports - violations) + "/" + std::to_string(reports) + " reports"};
}

Outcome toy_geometry(Runs& runs) {
  const auto& r = runs.get_fig3();
  const double within = r.value("fig3-toy/advmix", "within_4std_fraction");
  const double beyond = r.value("fig3-toy/mixup", "beyond_4std_fraction");
  return {within == 1.0 && beyond >= 0.20,
          "advmix within 4 std " + pct(within) + "% (need 100), mixup beyond 4 std " + pct(beyond) + "% (need >= 20)"};
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
          static_cast<std::uint8_t>(v)};
}

// Small versions of every preset: the determinism check does not depend on scale.
exp::ExperimentConfig shrunk(const std::string& name) {
  auto c = exp::preset_config(name);
  if (name == "fig3-toy") return c;
  c.dataset.train_count = 150;
  c.dataset.test_count = 60;
  c.regime.epochs = 1;
  c.regime.at_steps = 2;
  c.regime.attack.restarts = 2;
  c.regime.attack.steps = 2;
  c.eval.attack.restarts = 2;
  c.eval.attack.steps = 2;
  c.eval.robust_count = 20;
  c.decoder.train_params.epochs = 2;
  c.encoder.config.iterations = 5;
  c.encoder.config.init_samples = 8;
  c.encoder.feature_epochs = 1;
  return c;
}

Outcome formats(Runs&) {
  std::ostringstream detail;
  bool ok = true;

  // IDX fixture.
  std::vector<std::uint8_t> img, lbl;
  for (std::uint32_t v : {0x803u, 2u, 2u, 3u}) {
    const auto b = be32(v);
    img.insert(img.end(), b.begin(), b.end());
  }
  const std::vector<std::uint8_t> px{0, 1, 127, 128, 254, 255, 9, 10, 11, 200, 201, 202};
  img.insert(img.end(), px.begin(), px.end());
  for (std::uint32_t v : {0x801u, 2u}) {
    const auto b = be32(v);
    lbl.insert(lbl.end(), b.begin(), b.end());
  }
  lbl.insert(lbl.end(), {3, 9});
  const auto ds = data::parse_idx(img, lbl);
  bool idx_ok = ds.size() == 2 && ds.rows == 2 && ds.cols == 3 && ds.labels == std::vector<int>{3, 9};
  for (std::size_t i = 0; i < px.size(); ++i) idx_ok = idx_ok && ds.pixels[i] == px[i] / 255.0;
  ok = ok && idx_ok;
  detail << "idx " << (idx_ok ? "exact" : "MISMATCH");

  // PPM pixel mapping on every byte value.
  bool ppm_ok = true;
  std::vector<double> values;
  for (int b = 0; b < 256; ++b) values.push_back(b / 255.0);
  for (int b = 0; b < 256; ++b) ppm_ok = ppm_ok && eval::pixel_byte(values[static_cast<std::size_t>(b)]) == b;
  std::vector<double> image(values.begin(), values.begin() + 255);
  const auto dir = scratch("formats");
  eval::write_ppm(dir / "ramp.ppm", image, 5, 17);
  const std::string bytes = slurp(dir / "ramp.ppm");
  const std::string header = "P6\n17 5\n255\n";
  ppm_ok = ppm_ok && bytes.size() == header.size() + 255 && bytes.compare(0, header.size(), header) == 0;
  for (std::size_t i = 0; ppm_ok && i < 255; ++i) ppm_ok = static_cast<std::uint8_t>(bytes[header.size() + i]) == i;
  ok = ok && ppm_ok;
  detail << ", ppm " << (ppm_ok ? "exact" : "MISMATCH");

  // Provenance: every colored example decodes back from its recorded factors,
  // and survives the binary cache.
  std::size_t total = 0, exact = 0;
  auto bank = testing::glyph_bank(500, 4001);
  const gen::ProceduralGlyphDecoder dec(bank, gen::ColorSampler::uniform_box());
  for (auto mode : {data::ColorMode::kGaussianPalette, data::ColorMode::kUniformRandom, data::ColorMode::kRgbRestricted}) {
    const auto ex = testing::colored(*bank, mode, 0.1, 4002);
    data::save_colored(ex, dir / "cache.advmixx");
    const auto back = data::load_colored(dir / "cache.advmixx");
    for (std::size_t i = 0; i < ex.size(); ++i) {
      ++total;
      const bool same = back[i].image == ex[i].image && back[i].label == ex[i].label && back[i].provenance &&
                        back[i].provenance->color == ex[i].provenance->color &&
                        back[i].provenance->glyph_index == ex[i].provenance->glyph_index &&
                        dec.decode(inv::invert_procedural(dec, back[i])) == ex[i].image;
      exact += same;
    }
  }
  ok = ok && exact == total;
  detail << ", provenance " << exact << "/" << total;

  // Seed-fixed reruns of every preset.
  std::size_t identical = 0;
  for (const auto& name : exp::preset_names()) {
    const auto cfg = shrunk(name);
    exp::run_preset(name, cfg, scratch("rerun-a"), {});
    exp::run_preset(name, cfg, scratch("rerun-b"), {});
    const std::string a = slurp(fs::temp_directory_path() / "advmix_acceptance/rerun-a" / (name + ".csv"));
    const std::string b = slurp(fs::temp_directory_path() / "advmix_acceptance/rerun-b" / (name + ".csv"));
    identical += !a.empty() && a == b;
  }
  ok = ok && identical == exp::preset_names().size();
  detail << ", preset reruns byte-identical " << identical << "/" << exp::preset_names().size();
  return {ok, detail.str()};
}

Outcome invariance(Runs& runs) {
  const auto& r = runs.get_table2(0);
  const double adv = r.value("table2-rgb-linear/bias=red99.9/advmix", "invariance_rate");
  const double nom = r.value("table2-rgb-linear/bias=red99.9/nominal", "invariance_rate");

  Rng rng(5001);
  std::uniform_real_distribution<double> u(-0.5, 1.5), c01(0.0, 1.0);
  std::size_t bad = 0;
  const std::size_t cases = 100000;
  for (std::size_t i = 0; i < cases; ++i) {
    gen::PerpRegion region;
    region.center = {c01(rng), c01(rng), c01(rng)};
    region.radius_inf = 0.3 * c01(rng);
    region.box_lo = std::vector<double>{0, 0, 0};
    region.box_hi = std::vector<double>{1, 1, 1};
    const std::vector<double> z{u(rng), u(rng), u(rng)};
    const auto once = gen::project_perp(z, region);
    bool good = gen::project_perp(once, region) == once;
    for (int k = 0; k < 3; ++k) good = good && std::abs(once[k] - region.center[k]) <= region.radius_inf + 1e-12;
    bad += !good;
  }
  return {adv >= 0.95 && bad == 0,
          "red99.9 rgb-grid invariance: advmix " + pct(adv) + "% (nominal " + pct(nom) + "%); projection failures " +
              std::to_string(bad) + "/" + std::to_string(cases)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome(Runs&)>>> criteria{
      {"gradient oracle", gradient_oracle},   {"attack oracle", attack_oracle},
      {"rgb bias (table 2)", table2_bias},    {"sigma sweep (fig 5)", fig5_sweep},
      {"decoder bias (table 1)", table1_bias}, {"robustness gap", robustness_gap},
      {"toy geometry (fig 3)", toy_geometry}, {"formats and reruns", formats},
      {"invariance", invariance}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  Runs runs;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(id)) continue;
    std::fprintf(stderr, "criterion %d: %s ...\n", id, criteria[i].first);
    Outcome o;
    try {
      o = criteria[i].second(runs);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d %s: %s (%s)\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
