#include "hsfruit/optim.hpp"

#include <algorithm>
#include <cmath>

namespace hsf {

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kAdam: return "adam";
    case OptimizerKind::kAdaboundDefault: return "adabound_default";
    case OptimizerKind::kAdaboundLr01: return "adabound_lr01";
  }
  return "?";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "adabound_default") return OptimizerKind::kAdaboundDefault;
  if (name == "adabound_lr01" || name == "adabound") return OptimizerKind::kAdaboundLr01;
  fail(ErrorCode::kInvalidArgument, "unknown optimizer '" + name + "'");
}

double default_learning_rate(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kSgd: return 1e-2;
    case OptimizerKind::kAdam: return 1e-3;
    case OptimizerKind::kAdaboundDefault: return 1e-3;
    case OptimizerKind::kAdaboundLr01: return 1e-2;
  }
  return 1e-3;
}

Optimizer::Optimizer(std::vector<nn::NamedParam> params, OptimizerOptions options)
    : params_(std::move(params)), opt_(options) {
  lr_ = opt_.learning_rate > 0.0 ? opt_.learning_rate : default_learning_rate(opt_.kind);
  base_lr_ = lr_;
  m_.resize(params_.size());
  v_.resize(params_.size());
  scale_.assign(params_.size(), 1.0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].param->value.size(), 0.0f);
    if (opt_.kind != OptimizerKind::kSgd) v_[i].assign(params_[i].param->value.size(), 0.0f);
  }
}

void Optimizer::scale_learning_rate(const std::string& prefix, double factor) {
  if (!(factor >= 0.0)) fail(ErrorCode::kInvalidArgument, "learning-rate scale must be >= 0");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name.rfind(prefix, 0) == 0) scale_[i] *= factor;
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.param->grad.fill(0.0f);
}

void Optimizer::step() {
  ++t_;
  const double b1 = opt_.beta1, b2 = opt_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  // AdaBound bounds; final_lr follows lr changes relative to the initial rate.
  const double final_lr = opt_.final_lr * lr_ / base_lr_;
  const double lower = final_lr * (1.0 - 1.0 / (opt_.gamma * t_ + 1.0));
  const double upper = final_lr * (1.0 + 1.0 / (opt_.gamma * t_));

  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& w = params_[pi].param->value;
    const Tensor& g = params_[pi].param->grad;
    std::vector<float>& m = m_[pi];
    const std::size_t n = w.size();
    switch (opt_.kind) {
      case OptimizerKind::kSgd: {
        const float mu = static_cast<float>(opt_.momentum);
        const float lr = static_cast<float>(lr_ * scale_[pi]);
        const float wd = static_cast<float>(opt_.weight_decay);
        for (std::size_t i = 0; i < n; ++i) {
          const float gi = g[i] + wd * w[i];
          m[i] = mu * m[i] + gi;
          w[i] -= lr * m[i];
        }
        break;
      }
      case OptimizerKind::kAdam: {
        std::vector<float>& v = v_[pi];
        const double step_size = lr_ * scale_[pi] / bc1;
        const double sq = std::sqrt(bc2);
        for (std::size_t i = 0; i < n; ++i) {
          const double gi = g[i] + opt_.weight_decay * w[i];
          m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
          v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
          const double denom = std::sqrt(static_cast<double>(v[i])) / sq + opt_.eps;
          w[i] = static_cast<float>(w[i] - step_size * m[i] / denom);
        }
        break;
      }
      case OptimizerKind::kAdaboundDefault:
      case OptimizerKind::kAdaboundLr01: {
        std::vector<float>& v = v_[pi];
        const double step_size = lr_ * std::sqrt(bc2) / bc1;
        for (std::size_t i = 0; i < n; ++i) {
          const double gi = g[i] + opt_.weight_decay * w[i];
          m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
          v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
          double rate = step_size / (std::sqrt(static_cast<double>(v[i])) + opt_.eps);
          rate = std::clamp(rate, lower, upper) * scale_[pi];
          w[i] = static_cast<float>(w[i] - rate * m[i]);
        }
        break;
      }
    }
  }
}

}  // namespace hsf
