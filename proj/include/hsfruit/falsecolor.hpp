#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsfruit/image.hpp"
#include "hsfruit/models.hpp"
#include "hsfruit/preprocess.hpp"
#include "hsfruit/spectral.hpp"
#include "hsfruit/train_eval.hpp"

namespace hsf {

enum class BundleStage { kReconstructionOnly, kClassificationTuned };
std::string to_string(BundleStage s);
BundleStage bundle_stage_from_string(const std::string& s);

inline constexpr int kLatentDim = 3;

struct AutoencoderConfig {
  int epochs = 40;
  int batch_size = 256;
  double learning_rate = 1e-3;  // adam
  double holdout_fraction = 0.1;
  std::size_t min_spectra = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-pixel encoder B -> 64 -> 16 -> 3 and the mirrored decoder. Spectra are centred by the
/// training mean and divided by one global scale before the encoder; the decoder undoes it.
struct EncoderBundle {
  WavelengthAxis axis;
  std::vector<float> input_mean;
  float input_scale = 1.0f;
  nn::Sequential encoder;
  nn::Sequential decoder;
  std::array<double, kLatentDim> latent_min{0, 0, 0};
  std::array<double, kLatentDim> latent_max{1, 1, 1};
  BundleStage stage = BundleStage::kReconstructionOnly;
  std::string category;  // label category of the fine-tune, empty before it
  double train_mse = 0.0;
  double heldout_mse = 0.0;

  int bands() const { return axis.size(); }
  /// N x B spectra -> N x 3 raw latents.
  Tensor encode(const Tensor& spectra) const;
  /// N x 3 raw latents -> N x B spectra.
  Tensor decode(const Tensor& latents) const;
  /// Mean squared reconstruction error per element.
  double reconstruction_mse(const SpectraMatrix& spectra) const;
  /// Affine map of one latent dimension through latent_min/max (no clipping).
  double normalize(int dim, double z) const;
  /// Sets latent_min/max from the latents of `spectra`.
  void fit_latent_norm(const SpectraMatrix& spectra);
};

EncoderBundle build_encoder_bundle(const WavelengthAxis& axis, std::uint64_t seed = 0);

/// Stage one: MSE reconstruction on pixel spectra (labeled and unlabeled). The last
/// holdout_fraction of a seeded shuffle is held out; latent_norm comes from the rest.
EncoderBundle train_autoencoder(const SpectraMatrix& spectra, const WavelengthAxis& axis,
                                const AutoencoderConfig& cfg = {});

struct LatentClassifierConfig {
  ModelConfig classifier = default_classifier();
  TrainConfig train;
  bool freeze_encoder = false;
  // Encoder steps are this fraction of the classifier's. At full rate the fine-tune bends the
  // latent path so a colour channel can turn back along the ripening series.
  double encoder_lr_scale = 0.1;
  std::string category = "ripeness";

  static ModelConfig default_classifier();
};

/// Cube-level model: the bundle's encoder applied per pixel, fixed latent normalisation,
/// background kept at zero, then an HS-CNN over the 3 latent channels.
ClassifierModel build_latent_classifier(const EncoderBundle& bundle, const ModelConfig& classifier);

struct LatentClassifierResult {
  ClassifierModel model;
  TrainReport report;
  double val_accuracy = 0.0;
};

/// Stage two: fine-tunes encoder and classifier jointly with the train_eval recipe (the encoder
/// stays fixed when freeze_encoder is set), copies the encoder back, refits latent_norm on the
/// training fruit pixels and marks the bundle classification_tuned.
LatentClassifierResult train_latent_classifier(EncoderBundle& bundle, const CubeSet& train, const CubeSet& val,
                                               const LatentClassifierConfig& cfg = {});

/// Encode, normalise, clip to [0, 1]; latent dims become R, G, B. All-zero pixels stay black.
/// A reconstruction_only bundle renders but sets *warning.
RgbImage render_false_color(const EncoderBundle& bundle, const HyperCube& cube, std::string* warning = nullptr);

/// Both stages' weights, latent_norm, stage and category; the latent classifier when given.
void save_bundle(const EncoderBundle& bundle, const std::filesystem::path& path,
                 const ClassifierModel* classifier = nullptr);
EncoderBundle load_bundle(const std::filesystem::path& path, std::optional<ClassifierModel>* classifier = nullptr);

}  // namespace hsf
