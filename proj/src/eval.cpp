#include "advmix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "advmix/errors.hpp"

namespace advmix::eval {

namespace {

void check_counts(std::span<const double> images, std::span<const int> labels, std::size_t dim,
                  const char* what) {
  if (labels.empty()) throw DataError(std::string(what) + ": empty dataset");
  if (images.size() != labels.size() * dim) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(images.size()) +
                                " values for " + std::to_string(labels.size()) + " labels");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double eval_clean(const model::Classifier& f, std::span<const double> images,
                  std::span<const int> labels) {
  check_counts(images, labels, f.input_dim(), "eval_clean");
  const auto pred = f.predict(images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<double> per_class_accuracy(const model::Classifier& f, std::span<const double> images,
                                       std::span<const int> labels) {
  check_counts(images, labels, f.input_dim(), "per_class_accuracy");
  const auto pred = f.predict(images);
  std::vector<double> correct(f.num_classes(), 0.0), total(f.num_classes(), 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    total[static_cast<std::size_t>(labels[i])] += 1.0;
    correct[static_cast<std::size_t>(labels[i])] += pred[i] == labels[i];
  }
  for (std::size_t c = 0; c < total.size(); ++c)
    correct[c] = total[c] > 0 ? correct[c] / total[c] : std::numeric_limits<double>::quiet_NaN();
  return correct;
}

RobustResult eval_robust(const model::Classifier& f, const gen::Decoder& dec,
                         std::span<const gen::FactorLatent> latents, std::span<const int> labels,
                         std::span<const double> clean_images, const attack::LatentAttackConfig& cfg) {
  check_counts(clean_images, labels, f.input_dim(), "eval_robust");
  if (latents.size() != labels.size()) throw std::invalid_argument("eval_robust: latent count mismatch");
  const auto pred = f.predict(clean_images);

  std::vector<gen::FactorLatent> targets;
  std::vector<int> target_labels;
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (pred[i] != labels[i]) continue;
    targets.push_back(latents[i]);
    target_labels.push_back(labels[i]);
    seeds.push_back(attack::example_seed(cfg, i));
    where.push_back(i);
  }
  auto reports = attack::latent_pgd_batch(f, dec, targets, target_labels, cfg, seeds);

  RobustResult out;
  out.reports.resize(labels.size());
  out.attacked = targets.size();
  std::size_t robust = 0;
  double restarts = 0.0, steps = 0.0;
  for (std::size_t j = 0; j < reports.size(); ++j) {
    const auto& r = reports[j];
    if (r.failed) {
      ++out.errors;
    } else if (r.success) {
      ++out.successes;
      restarts += static_cast<double>(r.restarts_used);
      steps += static_cast<double>(r.steps_used);
    } else {
      ++robust;
    }
    out.reports[where[j]] = std::move(reports[j]);
  }
  if (static_cast<double>(out.errors) > 0.01 * static_cast<double>(labels.size())) {
    throw NumericError("eval_robust: " + std::to_string(out.errors) + " of " +
                       std::to_string(labels.size()) + " attacks failed");
  }
  const auto n = static_cast<double>(labels.size());
  out.clean_accuracy = static_cast<double>(targets.size()) / n;
  out.robust_accuracy = static_cast<double>(robust) / n;
  if (out.successes > 0) {
    out.mean_restarts_to_success = restarts / static_cast<double>(out.successes);
    out.mean_steps_to_success = steps / static_cast<double>(out.successes);
  }
  return out;
}

double eval_invariance(const model::Classifier& f, const gen::Decoder& dec,
                       std::span<const gen::FactorLatent> latents,
                       std::span<const std::vector<double>> grid) {
  if (grid.empty()) throw std::invalid_argument("eval_invariance: empty grid");
  if (latents.empty()) throw DataError("eval_invariance: no latents");
  std::vector<int> first;
  std::vector<bool> constant(latents.size(), true);
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    std::vector<gen::FactorLatent> moved(latents.begin(), latents.end());
    for (auto& z : moved) z.z_perp = grid[gi];
    const auto pred = f.predict(gen::decode_batch(dec, moved));
    if (gi == 0) {
      first = pred;
    } else {
      for (std::size_t i = 0; i < pred.size(); ++i) constant[i] = constant[i] && pred[i] == first[i];
    }
  }
  const auto count = static_cast<double>(std::count(constant.begin(), constant.end(), true));
  return count / static_cast<double>(latents.size());
}

std::vector<std::vector<double>> rgb_grid() { return {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}; }

std::vector<std::vector<double>> cube_grid(std::size_t k) {
  if (k < 2) throw std::invalid_argument("cube_grid: k must be >= 2");
  std::vector<std::vector<double>> out;
  const double step = 1.0 / static_cast<double>(k - 1);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t g = 0; g < k; ++g)
      for (std::size_t b = 0; b < k; ++b)
        out.push_back({static_cast<double>(r) * step, static_cast<double>(g) * step, static_cast<double>(b) * step});
  return out;
}

void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "experiment_id,metric,value,seed,config_hash\n";
  for (const auto& r : rows) {
    out << r.experiment_id << ',' << r.metric << ',' << fmt(r.value) << ',' << r.seed << ','
        << r.config_hash << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != "experiment_id,metric,value,seed,config_hash") {
    throw DataError(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<ReportRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) {
      throw DataError(path.string() + ": line " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " fields");
    }
    try {
      char* end = nullptr;
      const double value = std::strtod(cells[2].c_str(), &end);  // accepts subnormals, unlike stod
      if (cells[2].empty() || *end != '\0') throw std::invalid_argument("value");
      rows.push_back({cells[0], cells[1], value, std::stoull(cells[3]), cells[4]});
    } catch (const std::exception&) {
      throw DataError(path.string() + ": malformed number on line " + std::to_string(lineno));
    }
  }
  return rows;
}

std::vector<ReportRow> EvalReport::rows(const std::string& experiment_id, std::uint64_t seed,
                                        const std::string& config_hash) const {
  std::vector<ReportRow> out;
  auto add = [&](const std::string& metric, double v) {
    out.push_back({experiment_id, metric, v, seed, config_hash});
  };
  add("dominance_rule", 1.0);
  add("clean_accuracy", clean_accuracy);
  add("robust_accuracy", robust_accuracy);
  add("invariance_rate", invariance_rate);
  for (std::size_t e = 0; e < env_risks.size(); ++e) add("env_risk_" + std::to_string(e), env_risks[e]);
  if (!env_risks.empty()) add("env_risk_max", env_max);
  for (std::size_t c = 0; c < per_class_clean.size(); ++c)
    add("clean_accuracy_class_" + std::to_string(c), per_class_clean[c]);
  add("mean_restarts_to_success", mean_restarts_to_success);
  add("mean_steps_to_success", mean_steps_to_success);
  return out;
}

std::uint8_t pixel_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_ppm(const std::filesystem::path& path, std::span<const double> image, std::size_t height,
               std::size_t width) {
  if (image.size() != height * width * 3) {
    throw std::invalid_argument("write_ppm: " + std::to_string(image.size()) + " values for " +
                                std::to_string(height) + "x" + std::to_string(width) + "x3");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  for (double v : image) out.put(static_cast<char>(pixel_byte(v)));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

std::vector<double> rescaled_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("rescaled_difference: size mismatch");
  double peak = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) peak = std::max(peak, std::abs(a[i] - b[i]));
  std::vector<double> out(a.size(), 0.5);
  if (peak > 0.0)
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = 0.5 + (b[i] - a[i]) / (2.0 * peak);
  return out;
}

void write_triplet_ppm(const std::filesystem::path& path, std::span<const double> original,
                       std::span<const double> variant, std::size_t height, std::size_t width) {
  const auto diff = rescaled_difference(original, variant);
  const std::size_t row = width * 3;
  if (original.size() != height * row) throw std::invalid_argument("write_triplet_ppm: size mismatch");
  std::vector<double> canvas;
  canvas.reserve(3 * original.size());
  for (std::size_t r = 0; r < height; ++r)
    for (const auto* img : {&original, &variant}) {
      const auto s = img->subspan(r * row, row);
      canvas.insert(canvas.end(), s.begin(), s.end());
      if (img == &variant) canvas.insert(canvas.end(), diff.begin() + static_cast<std::ptrdiff_t>(r * row),
                                         diff.begin() + static_cast<std::ptrdiff_t>((r + 1) * row));
    }
  write_ppm(path, canvas, height, 3 * width);
}

}  // namespace advmix::eval
