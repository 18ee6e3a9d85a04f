#include "hsfruit/falsecolor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include <json.hpp>

#include "hsfruit/optim.hpp"
#include "hsfruit/preprocess.hpp"

namespace hsf {

using json = nlohmann::json;

std::string to_string(BundleStage s) {
  return s == BundleStage::kReconstructionOnly ? "reconstruction_only" : "classification_tuned";
}

BundleStage bundle_stage_from_string(const std::string& s) {
  if (s == "reconstruction_only") return BundleStage::kReconstructionOnly;
  if (s == "classification_tuned") return BundleStage::kClassificationTuned;
  fail(ErrorCode::kInvalidArgument, "unknown bundle stage '" + s + "'");
}

void AutoencoderConfig::validate() const {
  require(epochs >= 1, ErrorCode::kInvalidArgument, "autoencoder epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "autoencoder batch_size must be >= 1");
  require(learning_rate > 0.0, ErrorCode::kInvalidArgument, "autoencoder learning_rate must be > 0");
  require(holdout_fraction > 0.0 && holdout_fraction < 1.0, ErrorCode::kInvalidArgument,
          "holdout_fraction must lie in (0, 1)");
}

// ---------------------------------------------------------------------------

namespace {

Tensor standardize(const EncoderBundle& b, const float* rows, std::size_t n) {
  const int nb = b.bands();
  Tensor t({static_cast<int>(n), nb});
  const float inv = 1.0f / b.input_scale;
  for (std::size_t i = 0; i < n; ++i)
    for (int k = 0; k < nb; ++k) t[i * nb + k] = (rows[i * nb + k] - b.input_mean[k]) * inv;
  return t;
}

Tensor unstandardize(const EncoderBundle& b, Tensor y) {
  const int nb = b.bands();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] * b.input_scale + b.input_mean[i % nb];
  return y;
}

// Encoder applied to every foreground pixel of an N x B x H x W batch; output N x 3 x H x W of
// normalised latents with background left at zero.
class PixelEncoder final : public nn::Layer {
 public:
  explicit PixelEncoder(const EncoderBundle& b)
      : enc_(b.encoder), mean_(b.input_mean), scale_(b.input_scale), norm_({3, kLatentDim}) {
    // rows: offset, gain, bias
    for (int d = 0; d < kLatentDim; ++d) {
      const double range = b.latent_max[d] - b.latent_min[d];
      norm_[d] = static_cast<float>(b.latent_min[d]);
      norm_[kLatentDim + d] = range > 0.0 ? static_cast<float>(1.0 / range) : 0.0f;
      norm_[2 * kLatentDim + d] = range > 0.0 ? 0.0f : 0.5f;
    }
  }

  std::string kind() const override { return "pixel_encoder"; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<PixelEncoder>(*this); }
  void named_params(const std::string& prefix, std::vector<nn::NamedParam>& out) override {
    enc_.named_params(prefix, out);
  }
  void named_buffers(const std::string& prefix, std::vector<nn::NamedBuffer>& out) override {
    out.push_back({prefix + ".latent_norm", &norm_});
  }

  Tensor forward(const Tensor& x, bool training) override { return run(x, training, true); }
  Tensor infer(const Tensor& x) const override { return const_cast<PixelEncoder*>(this)->run(x, false, false); }

  Tensor backward(const Tensor& g, bool need_input_grad) override {
    require(!shape_.empty(), ErrorCode::kState, "pixel encoder backward without forward");
    const int b = shape_[1];
    const std::size_t plane = static_cast<std::size_t>(shape_[2]) * shape_[3];
    const std::size_t m = fg_.size();
    Tensor dx(shape_);
    if (m == 0) return dx;
    Tensor gz({static_cast<int>(m), kLatentDim});
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t s = fg_[i] / plane, p = fg_[i] % plane;
      for (int d = 0; d < kLatentDim; ++d) gz[i * kLatentDim + d] = g[(s * kLatentDim + d) * plane + p] * norm_[kLatentDim + d];
    }
    const Tensor gx = enc_.backward(gz, need_input_grad);
    if (!need_input_grad) return Tensor();
    const float inv = 1.0f / scale_;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t s = fg_[i] / plane, p = fg_[i] % plane;
      for (int k = 0; k < b; ++k) dx[(s * b + k) * plane + p] = gx[i * b + k] * inv;
    }
    return dx;
  }

 private:
  Tensor run(const Tensor& x, bool training, bool cache) {
    require(x.rank() == 4 && x.dim(1) == static_cast<int>(mean_.size()), ErrorCode::kShapeMismatch,
            "pixel encoder expects N x " + std::to_string(mean_.size()) + " x H x W input");
    const int n = x.dim(0), b = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    std::vector<std::size_t> fg;
    for (int s = 0; s < n; ++s)
      for (std::size_t p = 0; p < plane; ++p) {
        bool any = false;
        for (int k = 0; k < b && !any; ++k) any = x[(static_cast<std::size_t>(s) * b + k) * plane + p] != 0.0f;
        if (any) fg.push_back(static_cast<std::size_t>(s) * plane + p);
      }
    Tensor out({n, kLatentDim, x.dim(2), x.dim(3)});
    if (!fg.empty()) {
      Tensor g({static_cast<int>(fg.size()), b});
      const float inv = 1.0f / scale_;
      for (std::size_t i = 0; i < fg.size(); ++i) {
        const std::size_t s = fg[i] / plane, p = fg[i] % plane;
        for (int k = 0; k < b; ++k) g[i * b + k] = (x[(s * b + k) * plane + p] - mean_[k]) * inv;
      }
      const Tensor z = cache ? enc_.forward(g, training) : enc_.infer(g);
      for (std::size_t i = 0; i < fg.size(); ++i) {
        const std::size_t s = fg[i] / plane, p = fg[i] % plane;
        for (int d = 0; d < kLatentDim; ++d)
          out[(s * kLatentDim + d) * plane + p] = (z[i * kLatentDim + d] - norm_[d]) * norm_[kLatentDim + d] + norm_[2 * kLatentDim + d];
      }
    }
    if (cache) {
      shape_ = x.shape();
      fg_ = std::move(fg);
    }
    return out;
  }

  nn::Sequential enc_;
  std::vector<float> mean_;
  float scale_;
  Tensor norm_;
  std::vector<int> shape_;
  std::vector<std::size_t> fg_;
};

}  // namespace

// ---------------------------------------------------------------------------

Tensor EncoderBundle::encode(const Tensor& spectra) const {
  require(spectra.rank() == 2 && spectra.dim(1) == bands(), ErrorCode::kShapeMismatch,
          "encoder expects N x " + std::to_string(bands()) + " spectra");
  return encoder.infer(standardize(*this, spectra.data(), spectra.dim(0)));
}

Tensor EncoderBundle::decode(const Tensor& latents) const {
  require(latents.rank() == 2 && latents.dim(1) == kLatentDim, ErrorCode::kShapeMismatch, "decoder expects N x 3 latents");
  return unstandardize(*this, decoder.infer(latents));
}

double EncoderBundle::reconstruction_mse(const SpectraMatrix& s) const {
  require(s.bands == bands(), ErrorCode::kShapeMismatch, "spectra band count differs from the bundle");
  const std::size_t n = s.rows();
  require(n > 0, ErrorCode::kInsufficientData, "no spectra");
  double acc = 0.0;
  constexpr std::size_t chunk = 4096;
  for (std::size_t i = 0; i < n; i += chunk) {
    const std::size_t m = std::min(chunk, n - i);
    const Tensor y = unstandardize(*this, decoder.infer(encoder.infer(standardize(*this, s.data.data() + i * s.bands, m))));
    for (std::size_t e = 0; e < y.size(); ++e) {
      const double d = static_cast<double>(y[e]) - s.data[i * s.bands + e];
      acc += d * d;
    }
  }
  return acc / (static_cast<double>(n) * bands());
}

double EncoderBundle::normalize(int dim, double z) const {
  const double range = latent_max[dim] - latent_min[dim];
  return range > 0.0 ? (z - latent_min[dim]) / range : 0.5;
}

void EncoderBundle::fit_latent_norm(const SpectraMatrix& s) {
  require(s.rows() > 0, ErrorCode::kInsufficientData, "latent normalisation needs spectra");
  latent_min.fill(std::numeric_limits<double>::infinity());
  latent_max.fill(-std::numeric_limits<double>::infinity());
  constexpr std::size_t chunk = 4096;
  for (std::size_t i = 0; i < s.rows(); i += chunk) {
    const std::size_t m = std::min(chunk, s.rows() - i);
    const Tensor z = encoder.infer(standardize(*this, s.data.data() + i * s.bands, m));
    for (std::size_t r = 0; r < m; ++r)
      for (int d = 0; d < kLatentDim; ++d) {
        latent_min[d] = std::min(latent_min[d], static_cast<double>(z[r * kLatentDim + d]));
        latent_max[d] = std::max(latent_max[d], static_cast<double>(z[r * kLatentDim + d]));
      }
  }
}

EncoderBundle build_encoder_bundle(const WavelengthAxis& axis, std::uint64_t seed) {
  require(!axis.empty(), ErrorCode::kInvalidArgument, "empty wavelength axis");
  const int b = static_cast<int>(axis.size());
  EncoderBundle e;
  e.axis = axis;
  e.input_mean.assign(b, 0.0f);
  nn::Rng rng(seed);
  e.encoder.emplace<nn::Linear>("fc1", b, 64, rng);
  e.encoder.emplace<nn::ReLU>("act1");
  e.encoder.emplace<nn::Linear>("fc2", 64, 16, rng);
  e.encoder.emplace<nn::ReLU>("act2");
  e.encoder.emplace<nn::Linear>("fc3", 16, kLatentDim, rng);
  e.decoder.emplace<nn::Linear>("fc1", kLatentDim, 16, rng);
  e.decoder.emplace<nn::ReLU>("act1");
  e.decoder.emplace<nn::Linear>("fc2", 16, 64, rng);
  e.decoder.emplace<nn::ReLU>("act2");
  e.decoder.emplace<nn::Linear>("fc3", 64, b, rng);
  return e;
}

EncoderBundle train_autoencoder(const SpectraMatrix& spectra, const WavelengthAxis& axis, const AutoencoderConfig& cfg) {
  cfg.validate();
  require(spectra.bands == static_cast<int>(axis.size()), ErrorCode::kShapeMismatch,
          "spectra have " + std::to_string(spectra.bands) + " bands, axis has " + std::to_string(axis.size()));
  const std::size_t n = spectra.rows();
  require(n >= cfg.min_spectra, ErrorCode::kInsufficientData,
          "autoencoder needs at least " + std::to_string(cfg.min_spectra) + " spectra, got " + std::to_string(n));
  const int b = spectra.bands;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.holdout_fraction * n)));
  const std::size_t n_train = n - n_hold;
  SpectraMatrix tr, ho;
  tr.bands = ho.bands = b;
  tr.data.reserve(n_train * b);
  ho.data.reserve(n_hold * b);
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? tr : ho).append(spectra.row(order[i]));

  EncoderBundle e = build_encoder_bundle(axis, cfg.seed);
  std::vector<double> mean(b, 0.0);
  for (std::size_t i = 0; i < n_train; ++i)
    for (int k = 0; k < b; ++k) mean[k] += tr.data[i * b + k];
  for (int k = 0; k < b; ++k) e.input_mean[k] = static_cast<float>(mean[k] / n_train);
  double var = 0.0;
  for (std::size_t i = 0; i < n_train; ++i)
    for (int k = 0; k < b; ++k) {
      const double d = tr.data[i * b + k] - static_cast<double>(e.input_mean[k]);
      var += d * d;
    }
  var /= static_cast<double>(n_train) * b;
  e.input_scale = var > 1e-12 ? static_cast<float>(std::sqrt(var)) : 1.0f;

  auto params = nn::collect_params(e.encoder);
  for (auto& p : nn::collect_params(e.decoder)) params.push_back(p);
  OptimizerOptions oo;
  oo.kind = OptimizerKind::kAdam;
  oo.learning_rate = cfg.learning_rate;
  Optimizer opt(params, oo);

  std::vector<std::size_t> idx(n_train);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<float> rows;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // cosine decay to 5% of the initial rate
    const double c = 0.5 * (1.0 + std::cos(M_PI * epoch / cfg.epochs));
    opt.set_learning_rate(cfg.learning_rate * (0.05 + 0.95 * c));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t s = 0; s < n_train; s += cfg.batch_size) {
      const std::size_t m = std::min(n_train - s, static_cast<std::size_t>(cfg.batch_size));
      rows.resize(m * b);
      for (std::size_t i = 0; i < m; ++i) std::copy_n(tr.data.data() + idx[s + i] * b, b, rows.data() + i * b);
      const Tensor x = standardize(e, rows.data(), m);
      const Tensor y = e.decoder.forward(e.encoder.forward(x, true), true);
      Tensor g(y.shape());
      const float k2 = 2.0f / static_cast<float>(y.size());
      double loss = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const float d = y[i] - x[i];
        g[i] = k2 * d;
        loss += static_cast<double>(d) * d;
      }
      require(std::isfinite(loss), ErrorCode::kNumerical, "non-finite autoencoder loss in epoch " + std::to_string(epoch + 1));
      opt.zero_grad();
      e.encoder.backward(e.decoder.backward(g, true), false);
      opt.step();
    }
  }
  e.train_mse = e.reconstruction_mse(tr);
  e.heldout_mse = e.reconstruction_mse(ho);
  e.fit_latent_norm(tr);
  e.stage = BundleStage::kReconstructionOnly;
  return e;
}

// ---------------------------------------------------------------------------

ModelConfig LatentClassifierConfig::default_classifier() {
  ModelConfig m;
  m.in_bands = kLatentDim;
  m.widths = {16, 32, 64};
  return m;
}

ClassifierModel build_latent_classifier(const EncoderBundle& bundle, const ModelConfig& classifier) {
  require(classifier.in_bands == kLatentDim, ErrorCode::kInvalidArgument,
          "latent classifier must take 3 input channels, got " + std::to_string(classifier.in_bands));
  ClassifierModel head = build_model(classifier);
  nn::Sequential net;
  net.add("encoder", std::make_unique<PixelEncoder>(bundle));
  net.add("classifier", head.net().clone());
  ModelConfig cfg = classifier;
  cfg.architecture = Architecture::kCustom;
  cfg.in_bands = bundle.bands();
  return ClassifierModel(cfg, std::move(net));
}

LatentClassifierResult train_latent_classifier(EncoderBundle& bundle, const CubeSet& train_set, const CubeSet& val_set,
                                               const LatentClassifierConfig& cfg) {
  require(bundle.stage == BundleStage::kReconstructionOnly, ErrorCode::kState,
          "bundle is already classification_tuned; fine-tune a fresh reconstruction_only bundle");
  require(!train_set.empty() && !val_set.empty(), ErrorCode::kInsufficientData,
          "latent classifier needs labeled training and validation cubes for '" + cfg.category + "'");
  const int k = cfg.classifier.n_classes;
  std::vector<int> counts(k, 0);
  for (int c : train_set.labels) {
    require(c >= 0 && c < k, ErrorCode::kOutOfRange, "label out of range for '" + cfg.category + "'");
    ++counts[c];
  }
  for (int c = 0; c < k; ++c)
    require(counts[c] > 0, ErrorCode::kInsufficientData,
            "no training cubes of class " + std::to_string(c) + " for '" + cfg.category + "'");
  require(train_set.cubes.front().bands() == bundle.bands(), ErrorCode::kShapeMismatch,
          "cubes have " + std::to_string(train_set.cubes.front().bands()) + " bands, encoder expects " +
              std::to_string(bundle.bands()));

  LatentClassifierResult r{build_latent_classifier(bundle, cfg.classifier), {}, 0.0};
  TrainConfig tc = cfg.train;
  if (cfg.freeze_encoder) tc.frozen_prefixes.push_back("encoder.");
  require(cfg.encoder_lr_scale >= 0.0, ErrorCode::kInvalidArgument, "encoder_lr_scale must be >= 0");
  tc.lr_scales["encoder."] = cfg.encoder_lr_scale;
  r.report = train(r.model, train_set, val_set, tc);
  r.val_accuracy = evaluate(r.model, val_set).accuracy;

  // copy the tuned encoder weights back into the bundle
  auto src = r.model.parameters();
  auto dst = nn::collect_params(bundle.encoder);
  std::size_t j = 0;
  for (auto& p : src)
    if (p.name.rfind("encoder.", 0) == 0) {
      require(j < dst.size() && dst[j].param->value.same_shape(p.param->value), ErrorCode::kState,
              "encoder structure mismatch");
      dst[j++].param->value = p.param->value;
    }
  require(j == dst.size(), ErrorCode::kState, "encoder structure mismatch");
  bundle.fit_latent_norm(collect_fruit_pixels(train_set.cubes, std::numeric_limits<std::size_t>::max(), 0));
  bundle.stage = BundleStage::kClassificationTuned;
  bundle.category = cfg.category;
  return r;
}

RgbImage render_false_color(const EncoderBundle& bundle, const HyperCube& cube, std::string* warning) {
  require(cube.bands() == bundle.bands(), ErrorCode::kShapeMismatch,
          "cube has " + std::to_string(cube.bands()) + " bands, encoder expects " + std::to_string(bundle.bands()));
  if (warning)
    *warning = bundle.stage == BundleStage::kReconstructionOnly
                   ? "bundle is reconstruction_only; colors are not tuned to any label category"
                   : "";
  RgbImage img(cube.height(), cube.width());
  const int b = cube.bands();
  std::vector<std::size_t> fg;
  for (std::size_t p = 0; p < cube.pixel_count(); ++p)
    if (is_foreground(std::span<const float>(cube.data().data() + p * b, b))) fg.push_back(p);
  constexpr std::size_t chunk = 4096;
  std::vector<float> rows;
  for (std::size_t s = 0; s < fg.size(); s += chunk) {
    const std::size_t m = std::min(chunk, fg.size() - s);
    rows.resize(m * b);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(cube.data().data() + fg[s + i] * b, b, rows.data() + i * b);
    const Tensor z = bundle.encoder.infer(standardize(bundle, rows.data(), m));
    for (std::size_t i = 0; i < m; ++i)
      for (int d = 0; d < kLatentDim; ++d)
        img.data[fg[s + i] * 3 + d] =
            static_cast<float>(std::clamp(bundle.normalize(d, z[i * kLatentDim + d]), 0.0, 1.0));
  }
  return img;
}

// ---------------------------------------------------------------------------

void save_bundle(const EncoderBundle& bundle, const std::filesystem::path& path, const ClassifierModel* classifier) {
  NamedTensorFile f;
  f.kind = "falsecolor_bundle";
  json meta{{"wavelengths_nm", bundle.axis.values()},
            {"input_scale", bundle.input_scale},
            {"latent_min", bundle.latent_min},
            {"latent_max", bundle.latent_max},
            {"stage", to_string(bundle.stage)},
            {"category", bundle.category},
            {"train_mse", bundle.train_mse},
            {"heldout_mse", bundle.heldout_mse}};
  f.tensors.emplace_back("input_mean", Tensor({bundle.bands()}, bundle.input_mean));
  nn::Sequential enc = bundle.encoder, dec = bundle.decoder;
  for (auto& p : nn::collect_params(enc)) f.tensors.emplace_back("encoder." + p.name, p.param->value);
  for (auto& p : nn::collect_params(dec)) f.tensors.emplace_back("decoder." + p.name, p.param->value);
  if (classifier) {
    ClassifierModel c = *classifier;
    require(c.net().size() == 2 && c.net().at(0).kind() == "pixel_encoder", ErrorCode::kInvalidArgument,
            "not a latent classifier");
    ModelConfig head = c.config();
    head.in_bands = kLatentDim;
    head.architecture = Architecture::kHsCnn;
    meta["classifier"] = json::parse(head.to_json());
    for (auto& p : c.parameters()) f.tensors.emplace_back("latent_classifier." + p.name, p.param->value);
    for (auto& bf : c.buffers()) f.tensors.emplace_back("latent_classifier." + bf.name, *bf.buffer);
  }
  f.meta_json = meta.dump();
  write_tensor_file(f, path);
}

EncoderBundle load_bundle(const std::filesystem::path& path, std::optional<ClassifierModel>* classifier) {
  const NamedTensorFile f = read_tensor_file(path);
  require(f.kind == "falsecolor_bundle", ErrorCode::kFormat, path.string() + " is not a false-color bundle");
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : f.tensors) by_name[name] = &t;
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    require(it != by_name.end(), ErrorCode::kFormat, "bundle is missing tensor " + name);
    require(it->second->same_shape(dst), ErrorCode::kFormat, "tensor " + name + " has the wrong shape");
    dst = *it->second;
  };
  EncoderBundle e;
  json meta;
  try {
    meta = json::parse(f.meta_json);
    e = build_encoder_bundle(WavelengthAxis(meta.at("wavelengths_nm").get<std::vector<double>>()));
    e.input_scale = meta.at("input_scale").get<float>();
    e.latent_min = meta.at("latent_min").get<std::array<double, kLatentDim>>();
    e.latent_max = meta.at("latent_max").get<std::array<double, kLatentDim>>();
    e.stage = bundle_stage_from_string(meta.at("stage").get<std::string>());
    e.category = meta.value("category", "");
    e.train_mse = meta.value("train_mse", 0.0);
    e.heldout_mse = meta.value("heldout_mse", 0.0);
  } catch (const json::exception& ex) {
    fail(ErrorCode::kFormat, std::string("bad bundle header: ") + ex.what());
  }
  Tensor mean({e.bands()});
  take("input_mean", mean);
  e.input_mean = mean.vec();
  for (auto& p : nn::collect_params(e.encoder)) take("encoder." + p.name, p.param->value);
  for (auto& p : nn::collect_params(e.decoder)) take("decoder." + p.name, p.param->value);
  if (classifier) {
    classifier->reset();
    if (meta.contains("classifier")) {
      ClassifierModel c = build_latent_classifier(e, ModelConfig::from_json(meta["classifier"].dump()));
      for (auto& p : c.parameters()) take("latent_classifier." + p.name, p.param->value);
      for (auto& bf : c.buffers()) take("latent_classifier." + bf.name, *bf.buffer);
      *classifier = std::move(c);
    }
  }
  return e;
}

}  // namespace hsf
