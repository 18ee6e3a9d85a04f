#include "hsfruit/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "hsfruit/error.hpp"
#include "json.hpp"

namespace hsf {

using nlohmann::json;

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::kHsCnn: return "hscnn";
    case Architecture::kResNet18: return "resnet18";
    case Architecture::kAlexNet: return "alexnet";
    case Architecture::kCustom: return "custom";
  }
  return "?";
}
std::string to_string(ConvType c) { return c == ConvType::kSeparable ? "separable" : "normal"; }
std::string to_string(PoolingType p) { return p == PoolingType::kAverage ? "average" : "max"; }
std::string to_string(HeadType h) {
  switch (h) {
    case HeadType::kGapPlusLinear: return "gap_plus_linear";
    case HeadType::kGapOnly: return "gap_only";
    case HeadType::kFullyConnected: return "fully_connected";
  }
  return "?";
}

Architecture architecture_from_string(const std::string& s) {
  if (s == "hscnn" || s == "hs-cnn" || s == "hs_cnn") return Architecture::kHsCnn;
  if (s == "resnet18" || s == "resnet-18") return Architecture::kResNet18;
  if (s == "alexnet") return Architecture::kAlexNet;
  if (s == "custom") return Architecture::kCustom;
  fail(ErrorCode::kInvalidArgument, "unknown architecture '" + s + "'");
}
ConvType conv_type_from_string(const std::string& s) {
  if (s == "separable") return ConvType::kSeparable;
  if (s == "normal") return ConvType::kNormal;
  fail(ErrorCode::kInvalidArgument, "unknown conv type '" + s + "'");
}
PoolingType pooling_from_string(const std::string& s) {
  if (s == "average" || s == "avg") return PoolingType::kAverage;
  if (s == "max") return PoolingType::kMax;
  fail(ErrorCode::kInvalidArgument, "unknown pooling '" + s + "'");
}
HeadType head_from_string(const std::string& s) {
  if (s == "gap_plus_linear") return HeadType::kGapPlusLinear;
  if (s == "gap_only") return HeadType::kGapOnly;
  if (s == "fully_connected") return HeadType::kFullyConnected;
  fail(ErrorCode::kInvalidArgument, "unknown head '" + s + "'");
}

std::vector<int> ModelConfig::resolved_widths() const {
  if (!widths.empty()) return widths;
  std::vector<int> out;
  for (int base : {32, 64, 128}) {
    const double scaled = base * static_cast<double>(in_bands) / 224.0;
    out.push_back(std::max(8, static_cast<int>(std::lround(scaled / 8.0)) * 8));
  }
  return out;
}

void ModelConfig::validate() const {
  require(in_bands > 0, ErrorCode::kInvalidArgument, "in_bands must be positive");
  require(n_classes >= 2, ErrorCode::kInvalidArgument, "need at least two classes");
  if (architecture != Architecture::kHsCnn) return;
  const auto w = resolved_widths();
  require(w.size() == 3, ErrorCode::kInvalidArgument, "HS-CNN needs exactly 3 block widths");
  for (int v : w) require(v > 0, ErrorCode::kInvalidArgument, "block widths must be positive");
  require(kernel >= 1 && kernel % 2 == 1, ErrorCode::kInvalidArgument, "kernel must be a positive odd size");
  require(hidden >= 1, ErrorCode::kInvalidArgument, "hidden units must be positive");
  if (head == HeadType::kFullyConnected)
    require(input_size >= 8 && input_size % 8 == 0, ErrorCode::kInvalidArgument,
            "fully connected head needs an input size divisible by 8");
}

std::string ModelConfig::to_json() const {
  json j;
  j["architecture"] = to_string(architecture);
  j["in_bands"] = in_bands;
  j["n_classes"] = n_classes;
  j["conv_type"] = to_string(conv_type);
  j["pooling"] = to_string(pooling);
  j["head"] = to_string(head);
  j["widths"] = resolved_widths();
  j["kernel"] = kernel;
  j["hidden"] = hidden;
  j["input_size"] = input_size;
  j["seed"] = seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  ModelConfig c;
  try {
    const json j = json::parse(text);
    c.architecture = architecture_from_string(j.value("architecture", "hscnn"));
    c.in_bands = j.at("in_bands").get<int>();
    c.n_classes = j.value("n_classes", 3);
    c.conv_type = conv_type_from_string(j.value("conv_type", "separable"));
    c.pooling = pooling_from_string(j.value("pooling", "average"));
    c.head = head_from_string(j.value("head", "gap_plus_linear"));
    if (j.contains("widths")) c.widths = j["widths"].get<std::vector<int>>();
    c.kernel = j.value("kernel", 3);
    c.hidden = j.value("hidden", 64);
    c.input_size = j.value("input_size", 64);
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed model config: ") + e.what());
  }
  return c;
}

ClassifierModel::ClassifierModel(ModelConfig config, nn::Sequential net)
    : config_(std::move(config)), net_(std::move(net)) {}

void ClassifierModel::load_state_from(ClassifierModel& other) {
  auto dst = parameters();
  auto src = other.parameters();
  auto dbuf = buffers();
  auto sbuf = other.buffers();
  require(dst.size() == src.size() && dbuf.size() == sbuf.size(), ErrorCode::kShapeMismatch,
          "models have different structure");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    require(dst[i].param->value.same_shape(src[i].param->value), ErrorCode::kShapeMismatch,
            "parameter " + dst[i].name + " differs in shape");
    dst[i].param->value = src[i].param->value;
  }
  for (std::size_t i = 0; i < dbuf.size(); ++i) *dbuf[i].buffer = *sbuf[i].buffer;
}

// ---------------------------------------------------------------------------
// builders

ClassifierModel build_hscnn(const ModelConfig& cfg_in) {
  ModelConfig cfg = cfg_in;
  cfg.architecture = Architecture::kHsCnn;
  cfg.validate();
  const auto w = cfg.resolved_widths();
  cfg.widths = w;
  nn::Rng rng(cfg.seed);
  nn::Sequential net;
  const int pad = cfg.kernel / 2;
  int c_in = cfg.in_bands;
  for (int b = 0; b < 3; ++b) {
    nn::Sequential block;
    if (cfg.conv_type == ConvType::kSeparable) {
      block.emplace<nn::Conv2d>("dw", nn::Conv2dOptions{c_in, c_in, cfg.kernel, 1, pad, c_in, true}, rng);
      block.emplace<nn::Conv2d>("pw", nn::Conv2dOptions{c_in, w[b], 1, 1, 0, 1, true}, rng);
    } else {
      block.emplace<nn::Conv2d>("conv", nn::Conv2dOptions{c_in, w[b], cfg.kernel, 1, pad, 1, true}, rng);
    }
    block.emplace<nn::BatchNorm2d>("bn", w[b]);
    block.emplace<nn::ReLU>("act");
    block.emplace<nn::Pool2d>("pool", cfg.pooling == PoolingType::kAverage ? nn::PoolKind::kAverage : nn::PoolKind::kMax,
                              2, 2);
    net.add("block" + std::to_string(b + 1), std::make_unique<nn::Sequential>(std::move(block)));
    c_in = w[b];
  }
  switch (cfg.head) {
    case HeadType::kGapPlusLinear:
      net.emplace<nn::GlobalAvgPool>("gap");
      net.emplace<nn::Linear>("fc1", c_in, cfg.hidden, rng);
      net.emplace<nn::ReLU>("act");
      net.emplace<nn::Linear>("fc2", cfg.hidden, cfg.n_classes, rng);
      break;
    case HeadType::kGapOnly:
      net.emplace<nn::GlobalAvgPool>("gap");
      net.emplace<nn::Linear>("fc", c_in, cfg.n_classes, rng);
      break;
    case HeadType::kFullyConnected: {
      const int side = cfg.input_size / 8;
      net.emplace<nn::Flatten>("flatten");
      net.emplace<nn::Linear>("fc1", c_in * side * side, cfg.hidden, rng);
      net.emplace<nn::ReLU>("act");
      net.emplace<nn::Linear>("fc2", cfg.hidden, cfg.n_classes, rng);
      break;
    }
  }
  return ClassifierModel(cfg, std::move(net));
}

ClassifierModel build_resnet18_adapted(int in_bands, std::uint64_t seed, int n_classes) {
  ModelConfig cfg;
  cfg.architecture = Architecture::kResNet18;
  cfg.in_bands = in_bands;
  cfg.n_classes = n_classes;
  cfg.seed = seed;
  cfg.validate();
  nn::Rng rng(seed);
  nn::Sequential net;
  net.emplace<nn::Conv2d>("conv1", nn::Conv2dOptions{in_bands, 64, 7, 2, 3, 1, false}, rng);
  net.emplace<nn::BatchNorm2d>("bn1", 64);
  net.emplace<nn::ReLU>("relu");
  net.emplace<nn::Pool2d>("maxpool", nn::PoolKind::kMax, 3, 2, 1);
  int c = 64;
  const int widths[4] = {64, 128, 256, 512};
  for (int l = 0; l < 4; ++l) {
    nn::Sequential layer;
    const int stride = l == 0 ? 1 : 2;
    layer.emplace<nn::ResidualBlock>("0", c, widths[l], stride, rng);
    layer.emplace<nn::ResidualBlock>("1", widths[l], widths[l], 1, rng);
    net.add("layer" + std::to_string(l + 1), std::make_unique<nn::Sequential>(std::move(layer)));
    c = widths[l];
  }
  net.emplace<nn::GlobalAvgPool>("avgpool");
  net.emplace<nn::Linear>("fc", 512, n_classes, rng);
  return ClassifierModel(cfg, std::move(net));
}

ClassifierModel build_alexnet_adapted(int in_bands, std::uint64_t seed, int n_classes) {
  ModelConfig cfg;
  cfg.architecture = Architecture::kAlexNet;
  cfg.in_bands = in_bands;
  cfg.n_classes = n_classes;
  cfg.seed = seed;
  cfg.validate();
  nn::Rng rng(seed);
  nn::Sequential features;
  features.emplace<nn::Conv2d>("0", nn::Conv2dOptions{in_bands, 64, 11, 4, 2, 1, true}, rng);
  features.emplace<nn::ReLU>("1");
  features.emplace<nn::Pool2d>("2", nn::PoolKind::kMax, 3, 2);
  features.emplace<nn::Conv2d>("3", nn::Conv2dOptions{64, 192, 5, 1, 2, 1, true}, rng);
  features.emplace<nn::ReLU>("4");
  features.emplace<nn::Pool2d>("5", nn::PoolKind::kMax, 3, 2);
  features.emplace<nn::Conv2d>("6", nn::Conv2dOptions{192, 384, 3, 1, 1, 1, true}, rng);
  features.emplace<nn::ReLU>("7");
  features.emplace<nn::Conv2d>("8", nn::Conv2dOptions{384, 256, 3, 1, 1, 1, true}, rng);
  features.emplace<nn::ReLU>("9");
  features.emplace<nn::Conv2d>("10", nn::Conv2dOptions{256, 256, 3, 1, 1, 1, true}, rng);
  features.emplace<nn::ReLU>("11");
  features.emplace<nn::Pool2d>("12", nn::PoolKind::kMax, 3, 2);
  nn::Sequential classifier;
  classifier.emplace<nn::Dropout>("0", 0.5f, seed + 1);
  classifier.emplace<nn::Linear>("1", 256 * 6 * 6, 4096, rng);
  classifier.emplace<nn::ReLU>("2");
  classifier.emplace<nn::Dropout>("3", 0.5f, seed + 2);
  classifier.emplace<nn::Linear>("4", 4096, 4096, rng);
  classifier.emplace<nn::ReLU>("5");
  classifier.emplace<nn::Linear>("6", 4096, n_classes, rng);
  nn::Sequential net;
  net.add("features", std::make_unique<nn::Sequential>(std::move(features)));
  net.emplace<nn::AdaptiveAvgPool2d>("avgpool", 6, 6);
  net.emplace<nn::Flatten>("flatten");
  net.add("classifier", std::make_unique<nn::Sequential>(std::move(classifier)));
  return ClassifierModel(cfg, std::move(net));
}

ClassifierModel build_model(const ModelConfig& cfg) {
  switch (cfg.architecture) {
    case Architecture::kHsCnn: return build_hscnn(cfg);
    case Architecture::kResNet18: return build_resnet18_adapted(cfg.in_bands, cfg.seed, cfg.n_classes);
    case Architecture::kAlexNet: return build_alexnet_adapted(cfg.in_bands, cfg.seed, cfg.n_classes);
    case Architecture::kCustom: break;
  }
  fail(ErrorCode::kInvalidArgument, "custom architectures cannot be rebuilt from a config");
}

std::size_t count_parameters(ClassifierModel& model) { return model.param_count(); }

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'H', 'S', 'F', 'C', 'K', 'P', 'T', '\0'};
constexpr int kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

void write_tensor_file(const NamedTensorFile& file, const std::filesystem::path& path) {
  json header;
  header["format_version"] = kFormatVersion;
  header["kind"] = file.kind;
  header["meta"] = json::parse(file.meta_json);
  json table = json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  header["tensors"] = table;
  header["blob_floats"] = offset;
  const std::string h = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(kMagic, 8);
  const std::uint32_t len = static_cast<std::uint32_t>(h.size());
  out.write(reinterpret_cast<const char*>(&len), 4);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : file.tensors)
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

NamedTensorFile read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&len), 4);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) fail(ErrorCode::kFormat, path.string() + " is not a checkpoint file");
  std::string h(len, '\0');
  in.read(h.data(), len);
  if (!in) fail(ErrorCode::kFormat, path.string() + ": truncated checkpoint header");
  NamedTensorFile f;
  try {
    const json header = json::parse(h);
    const int version = header.at("format_version").get<int>();
    if (version != kFormatVersion)
      fail(ErrorCode::kFormat, path.string() + ": unsupported checkpoint version " + std::to_string(version));
    f.kind = header.at("kind").get<std::string>();
    f.meta_json = header.at("meta").dump();
    const std::size_t total = header.at("blob_floats").get<std::size_t>();
    std::vector<float> blob(total);
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(total * sizeof(float)));
    if (!in) fail(ErrorCode::kFormat, path.string() + ": truncated tensor blob");
    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<int>>();
      const std::size_t off = e.at("offset").get<std::size_t>();
      const std::size_t n = Tensor::count(shape);
      require(off + n <= total, ErrorCode::kFormat, path.string() + ": tensor table exceeds blob");
      f.tensors.emplace_back(e.at("name").get<std::string>(),
                             Tensor(shape, std::vector<float>(blob.begin() + static_cast<std::ptrdiff_t>(off),
                                                              blob.begin() + static_cast<std::ptrdiff_t>(off + n))));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": malformed checkpoint header: " + e.what());
  }
  return f;
}

void save_checkpoint(ClassifierModel& model, const std::filesystem::path& path, const std::string& extra_json) {
  require(model.config().architecture != Architecture::kCustom, ErrorCode::kInvalidArgument,
          "custom models cannot be checkpointed");
  NamedTensorFile f;
  f.kind = "classifier";
  json meta;
  meta["config"] = json::parse(model.config().to_json());
  meta["extra"] = json::parse(extra_json);
  f.meta_json = meta.dump();
  for (const auto& p : model.parameters()) f.tensors.emplace_back(p.name, p.param->value);
  for (const auto& b : model.buffers()) f.tensors.emplace_back(b.name, *b.buffer);
  write_tensor_file(f, path);
}

ClassifierModel load_checkpoint(const std::filesystem::path& path, std::string* extra_json) {
  const NamedTensorFile f = read_tensor_file(path);
  require(f.kind == "classifier", ErrorCode::kFormat, path.string() + " holds a '" + f.kind + "' checkpoint");
  const json meta = json::parse(f.meta_json);
  ClassifierModel model = build_model(ModelConfig::from_json(meta.at("config").dump()));
  if (extra_json) *extra_json = meta.value("extra", json::object()).dump();
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : f.tensors) by_name[name] = &t;
  auto assign = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) fail(ErrorCode::kFormat, path.string() + ": checkpoint lacks tensor " + name);
    if (!it->second->same_shape(dst))
      fail(ErrorCode::kShapeMismatch, path.string() + ": tensor " + name + " has shape " +
                                          shape_string(it->second->shape()) + ", model expects " +
                                          shape_string(dst.shape()));
    dst = *it->second;
  };
  for (auto& p : model.parameters()) assign(p.name, p.param->value);
  for (auto& b : model.buffers()) assign(b.name, *b.buffer);
  return model;
}

}  // namespace hsf
