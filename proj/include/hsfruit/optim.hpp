#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hsfruit/nn.hpp"

namespace hsf {

enum class OptimizerKind { kSgd, kAdam, kAdaboundDefault, kAdaboundLr01 };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::kAdaboundLr01;
  /// <= 0 selects the variant's default (sgd 1e-2, adam 1e-3, adabound_default 1e-3, adabound_lr01 1e-2).
  double learning_rate = 0.0;
  double momentum = 0.9;  // sgd
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double final_lr = 0.1;  // adabound
  double gamma = 1e-3;    // adabound bound convergence speed
  double weight_decay = 0.0;
};

double default_learning_rate(OptimizerKind kind);

/// First-order optimizer over a fixed parameter list. A step with all-zero gradients
/// leaves the parameters unchanged for every variant.
class Optimizer {
 public:
  Optimizer(std::vector<nn::NamedParam> params, OptimizerOptions options);

  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps_taken() const { return t_; }
  /// Multiplies the step of every parameter whose name starts with prefix.
  void scale_learning_rate(const std::string& prefix, double factor);

 private:
  std::vector<nn::NamedParam> params_;
  OptimizerOptions opt_;
  double lr_;
  double base_lr_;
  long t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  std::vector<double> scale_;
};

}  // namespace hsf
