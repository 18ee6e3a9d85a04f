#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hsfruit/tensor.hpp"

// Minimal layer library with hand-written backward passes. Every layer supports
//   forward(x, training)  -- caches what backward needs,
//   backward(grad)        -- accumulates parameter gradients, returns d(loss)/dx,
//   infer(x) const        -- cache-free evaluation, safe to call concurrently.
// forward(x, false) and infer(x) run the same kernels and agree bit-exactly.
namespace hsf::nn {

using Rng = std::mt19937_64;

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

struct NamedParam {
  std::string name;
  Param* param;
};

struct NamedBuffer {
  std::string name;
  Tensor* buffer;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string kind() const = 0;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out, bool need_input_grad = true) = 0;
  virtual Tensor infer(const Tensor& x) const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;

  virtual void named_params(const std::string& prefix, std::vector<NamedParam>& out);
  virtual void named_buffers(const std::string& /*prefix*/, std::vector<NamedBuffer>& /*out*/) {}

 protected:
  std::vector<Param*> own_params_;  // filled by leaf layers in their constructors
  void rebind_params(std::initializer_list<Param*> ps) { own_params_.assign(ps); }
};

struct Conv2dOptions {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int stride = 1;
  int padding = 0;
  int groups = 1;  // 1 or in_channels (depthwise, out_channels == in_channels)
  bool bias = true;
};

class Conv2d final : public Layer {
 public:
  Conv2d(const Conv2dOptions& opt, Rng& rng);
  Conv2d(const Conv2d& other);
  std::string kind() const override { return opt_.groups == 1 ? "conv2d" : "depthwise_conv2d"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  const Conv2dOptions& options() const { return opt_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  Conv2dOptions opt_;
  Param weight_;
  Param bias_;
  Tensor cache_x_;
};

class Linear final : public Layer {
 public:
  Linear(int in_features, int out_features, Rng& rng, bool bias = true);
  Linear(const Linear& other);
  std::string kind() const override { return "linear"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_;
  int out_;
  bool has_bias_;
  Param weight_;  // out x in
  Param bias_;
  Tensor cache_x_;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);
  BatchNorm2d(const BatchNorm2d& other);
  std::string kind() const override { return "batchnorm2d"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }
  void named_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override;

 private:
  int channels_;
  float momentum_;
  float eps_;
  Param gamma_;
  Param beta_;
  Tensor running_mean_;
  Tensor running_var_;
  // cache
  bool cached_training_ = false;
  Tensor cache_x_;  // eval mode
  Tensor xhat_;     // training mode
  std::vector<float> inv_std_;
};

class ReLU final : public Layer {
 public:
  std::string kind() const override { return "relu"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(); }

 private:
  Tensor cache_y_;
};

enum class PoolKind { kAverage, kMax };

class Pool2d final : public Layer {
 public:
  Pool2d(PoolKind kind, int kernel, int stride, int padding = 0);
  std::string kind() const override { return kind_ == PoolKind::kMax ? "maxpool2d" : "avgpool2d"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Pool2d>(kind_, kernel_, stride_, padding_); }

 private:
  Tensor run(const Tensor& x, std::vector<std::int32_t>* argmax) const;
  PoolKind kind_;
  int kernel_;
  int stride_;
  int padding_;
  std::vector<int> in_shape_;
  std::vector<std::int32_t> argmax_;
};

/// N x C x H x W -> N x C (spatial mean).
class GlobalAvgPool final : public Layer {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(); }

 private:
  std::vector<int> in_shape_;
};

/// Adaptive average pooling to a fixed output grid (torchvision bin boundaries).
class AdaptiveAvgPool2d final : public Layer {
 public:
  AdaptiveAvgPool2d(int out_h, int out_w) : out_h_(out_h), out_w_(out_w) {}
  std::string kind() const override { return "adaptive_avg_pool2d"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AdaptiveAvgPool2d>(out_h_, out_w_); }

 private:
  int out_h_;
  int out_w_;
  std::vector<int> in_shape_;
};

class Flatten final : public Layer {
 public:
  std::string kind() const override { return "flatten"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(); }

 private:
  std::vector<int> in_shape_;
};

class Dropout final : public Layer {
 public:
  Dropout(float p, std::uint64_t seed) : p_(p), rng_(seed) {}
  std::string kind() const override { return "dropout"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override { return x; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }

 private:
  float p_;
  Rng rng_;
  std::vector<float> mask_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  Sequential& add(std::string name, std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  Sequential& emplace(std::string name, Args&&... args) {
    return add(std::move(name), std::make_unique<L>(std::forward<Args>(args)...));
  }

  std::string kind() const override { return "sequential"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }
  void named_params(const std::string& prefix, std::vector<NamedParam>& out) override;
  void named_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override;

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer& at(std::size_t i) { return *layers_.at(i).second; }
  const Layer& at(std::size_t i) const { return *layers_.at(i).second; }
  const std::string& name_at(std::size_t i) const { return layers_.at(i).first; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

/// ResNet basic block: relu(bn(conv(relu(bn(conv(x))))) + shortcut(x)).
class ResidualBlock final : public Layer {
 public:
  ResidualBlock(int in_channels, int out_channels, int stride, Rng& rng);
  std::string kind() const override { return "residual_block"; }
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  Tensor infer(const Tensor& x) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }
  void named_params(const std::string& prefix, std::vector<NamedParam>& out) override;
  void named_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override;

 private:
  Sequential main_;
  Sequential shortcut_;  // empty = identity
  Tensor cache_y_;
};

// Helpers over a whole layer tree.
std::vector<NamedParam> collect_params(Layer& root);
std::vector<NamedBuffer> collect_buffers(Layer& root);
std::size_t parameter_count(Layer& root);
void zero_grad(Layer& root);

/// Row-wise softmax of an N x K logit tensor, computed in double.
std::vector<std::vector<double>> softmax_rows(const Tensor& logits);

/// Keeps large freed blocks inside the heap (glibc) so per-batch activations do not pay for
/// fresh page faults on every allocation. Process-wide; executables call it once at startup.
void keep_large_allocations();

}  // namespace hsf::nn
