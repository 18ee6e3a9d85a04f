#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "hsfruit/nn.hpp"

namespace hsf {

enum class Architecture { kHsCnn, kResNet18, kAlexNet, kCustom };
enum class ConvType { kSeparable, kNormal };
enum class PoolingType { kAverage, kMax };
enum class HeadType { kGapPlusLinear, kGapOnly, kFullyConnected };

std::string to_string(Architecture a);
std::string to_string(ConvType c);
std::string to_string(PoolingType p);
std::string to_string(HeadType h);
Architecture architecture_from_string(const std::string& s);
ConvType conv_type_from_string(const std::string& s);
PoolingType pooling_from_string(const std::string& s);
HeadType head_from_string(const std::string& s);

struct ModelConfig {
  Architecture architecture = Architecture::kHsCnn;
  int in_bands = 224;
  int n_classes = 3;
  ConvType conv_type = ConvType::kSeparable;
  PoolingType pooling = PoolingType::kAverage;
  HeadType head = HeadType::kGapPlusLinear;
  /// Per-block channel counts. Empty: 32/64/128 scaled by in_bands/224, rounded to multiples of 8.
  std::vector<int> widths;
  int kernel = 3;
  int hidden = 64;      // hidden units of the linear head
  int input_size = 64;  // spatial side the fully connected head is sized for
  std::uint64_t seed = 0;

  std::vector<int> resolved_widths() const;
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

/// A built network plus its configuration. Inputs are N x B x H x W, outputs N x n_classes logits.
class ClassifierModel {
 public:
  ClassifierModel(ModelConfig config, nn::Sequential net);
  ClassifierModel(const ClassifierModel& other) = default;
  ClassifierModel& operator=(const ClassifierModel& other) = default;
  ClassifierModel(ClassifierModel&&) noexcept = default;
  ClassifierModel& operator=(ClassifierModel&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  nn::Sequential& net() { return net_; }
  const nn::Sequential& net() const { return net_; }

  Tensor forward(const Tensor& x, bool training) { return net_.forward(x, training); }
  Tensor backward(const Tensor& grad, bool need_input_grad = false) { return net_.backward(grad, need_input_grad); }
  Tensor infer(const Tensor& x) const { return net_.infer(x); }

  std::vector<nn::NamedParam> parameters() { return nn::collect_params(net_); }
  std::vector<nn::NamedBuffer> buffers() { return nn::collect_buffers(net_); }
  std::size_t param_count() { return nn::parameter_count(net_); }

  /// Copies parameter and buffer values from a model of identical structure.
  void load_state_from(ClassifierModel& other);

 private:
  ModelConfig config_;
  nn::Sequential net_;
};

/// Three [depthwise k x k -> pointwise 1 x 1 -> batch norm -> ReLU -> 2 x 2 pooling] blocks
/// (or dense k x k convolutions), global average pooling and the configured head.
ClassifierModel build_hscnn(const ModelConfig& cfg);
ClassifierModel build_resnet18_adapted(int in_bands, std::uint64_t seed = 0, int n_classes = 3);
ClassifierModel build_alexnet_adapted(int in_bands, std::uint64_t seed = 0, int n_classes = 3);
/// Dispatches on cfg.architecture.
ClassifierModel build_model(const ModelConfig& cfg);

std::size_t count_parameters(ClassifierModel& model);

/// Binary checkpoint: magic "HSFCKPT\0", uint32 LE header length, JSON header (format version,
/// model config, tensor table), then a little-endian float32 blob. `extra` is stored verbatim
/// as a JSON value under "extra".
void save_checkpoint(ClassifierModel& model, const std::filesystem::path& path, const std::string& extra_json = "{}");
ClassifierModel load_checkpoint(const std::filesystem::path& path, std::string* extra_json = nullptr);

/// Generic named-tensor store used by checkpoints of other model families.
struct NamedTensorFile {
  std::string kind;
  std::string meta_json = "{}";
  std::vector<std::pair<std::string, Tensor>> tensors;
};
void write_tensor_file(const NamedTensorFile& file, const std::filesystem::path& path);
NamedTensorFile read_tensor_file(const std::filesystem::path& path);

}  // namespace hsf
