#pragma once

// Dense classifiers on flattened inputs: a linear model and a ReLU network
// with two hidden layers.

#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "advmix/autodiff.hpp"
#include "advmix/rng.hpp"

namespace advmix::model {

enum class Arch { kLinear, kMlp2 };

std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);

class Classifier {
 public:
  // `hidden` must be empty for kLinear and hold two widths for kMlp2.
  // Weights are Glorot-uniform, biases zero.
  Classifier(Arch arch, std::size_t input_dim, std::size_t num_classes,
             std::vector<std::size_t> hidden, Rng& init_rng);

  static Classifier linear(std::size_t input_dim, std::size_t num_classes, Rng& init_rng);
  static Classifier mlp2(std::size_t input_dim, std::size_t num_classes, Rng& init_rng,
                         std::size_t width1 = 256, std::size_t width2 = 128);

  struct Forward {
    ad::Tensor logits;
    // Post-activation output of every layer; the last entry is the logits.
    std::vector<ad::Tensor> activations;
  };

  // x is [B, input_dim]. Parameters enter the graph as constants unless
  // `bound` (from bind_parameters on the same graph) is supplied.
  Forward forward(const ad::Tensor& x, const std::vector<ad::Tensor>* bound = nullptr) const;
  ad::Tensor logits(const ad::Tensor& x) const { return forward(x).logits; }
  std::vector<ad::Tensor> bind_parameters(ad::Graph& graph) const;

  // Flat row-major batch in, one prediction / logit row per input row out.
  std::vector<int> predict(std::span<const double> x) const;
  std::vector<double> logit_values(std::span<const double> x) const;

  // Immutable copy for attacks and evaluation.
  std::shared_ptr<const Classifier> snapshot() const {
    return std::make_shared<const Classifier>(*this);
  }

  Arch arch() const { return arch_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }
  std::vector<ad::Parameter>& parameters() { return params_; }
  const std::vector<ad::Parameter>& parameters() const { return params_; }

  // "ADVMIXC1" checkpoint: arch tag, dims, float64 parameters.
  void save(const std::filesystem::path& path) const;
  static Classifier load(const std::filesystem::path& path);

 private:
  Classifier() = default;

  Arch arch_ = Arch::kLinear;
  std::size_t input_dim_ = 0;
  std::size_t num_classes_ = 0;
  std::vector<std::size_t> hidden_;
  std::vector<ad::Parameter> params_;  // W, b per layer
};

}  // namespace advmix::model
