#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hsfruit/dataset.hpp"
#include "hsfruit/models.hpp"
#include "hsfruit/preprocess.hpp"
#include "hsfruit/train_eval.hpp"

namespace hsf {

struct SynthSection {
  int n = 30;
  std::array<double, 3> balance{1.0 / 3, 1.0 / 3, 1.0 / 3};
  int size = 64;
  std::string signal = "ripening";
  double noise = 0.01;
  double band_amplitude = 0.15;
  bool raw = false;  // also write raw scenes with white/dark references
};

struct CalibrateSection {
  std::string raw;                 // raw frame, or a directory of them
  std::vector<std::string> white;  // averaged; empty: <stem>_white next to each raw frame
  std::vector<std::string> dark;   // averaged; empty: <stem>_dark next to each raw frame
};

struct PreprocessSection {
  std::string mask_dir;  // hand labels <id>_mask; empty: next to the cube
  double threshold = 0.5;
  int size = 64;
  std::size_t max_training_pixels = 60000;
};

struct GridSection {
  std::vector<std::string> models{"hscnn", "svm", "knn"};
  std::vector<std::string> reductions{"full", "rgb", "pca5"};
  std::vector<std::string> categories;  // empty: the top-level category
  std::vector<std::uint64_t> seeds{0};
};

struct AblateSection {
  std::string axis = "pooling";
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct AttributeSection {
  std::string record;  // recording id; empty: first test record
  int target = -1;     // -1: the record's label
  int steps = 128;
};

struct FalsecolorSection {
  std::string bundle;                          // existing bundle: render only
  std::vector<std::string> unlabeled_manifests;  // extra spectra for the autoencoder
  std::vector<std::string> render;             // recording ids; empty: the test split
  int autoencoder_epochs = 40;
  std::size_t max_pixels_per_cube = 0;
  bool freeze_encoder = false;
  double encoder_lr_scale = 0.1;
};

/// Everything a command needs. Relative paths resolve against data_root.
struct PipelineConfig {
  std::string data_root;  // empty: $HSFRUIT_DATA_ROOT, then "."
  std::string output_dir;
  bool overwrite = false;
  std::string manifest = "manifest.csv";
  std::string split_file;  // empty: split computed from the seed
  std::string camera;      // record filter, empty = any
  std::string fruit;       // record filter, empty = any
  Category category = Category::kFirmness;
  Reduction reduction = Reduction::kFull;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  int tta_views = 8;
  std::string checkpoint;

  SynthSection synth;
  CalibrateSection calibrate;
  PreprocessSection preprocess;
  GridSection grid;
  AblateSection ablate;
  AttributeSection attribute;
  FalsecolorSection falsecolor;

  /// Unknown keys and wrongly typed values raise kInvalidArgument naming the field.
  static PipelineConfig from_json(const std::string& text);
  std::string to_json() const;
  std::string hash() const;
  void validate() const;

  std::filesystem::path resolve(const std::string& p) const;
};

/// Applies "dotted.key=value" overrides to a JSON config document. Values that parse as JSON
/// are used as such, anything else as a string.
std::string apply_overrides(const std::string& config_json, const std::vector<std::string>& overrides);

std::vector<std::string> pipeline_commands();

/// A checkpoint written by the train command together with the reduction it was trained on.
struct TrainedModel {
  ClassifierModel model;
  Reduction reduction = Reduction::kFull;
  std::optional<PcaProjection> pca;
  std::string extra_json;

  /// Applies the stored reduction, then the model; softmax probabilities.
  std::vector<double> predict(const HyperCube& cube) const;
};

TrainedModel load_trained_model(const std::filesystem::path& checkpoint);

/// Runs one command; returns its JSON summary (also written to <output_dir>/summary.json).
/// The output directory must not exist or be empty unless `overwrite` is set.
std::string run_command(const std::string& name, const PipelineConfig& cfg, const GridLog& log = {});

}  // namespace hsf
