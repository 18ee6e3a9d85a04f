#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsfruit/dataset.hpp"
#include "hsfruit/models.hpp"
#include "hsfruit/optim.hpp"
#include "hsfruit/preprocess.hpp"
#include "hsfruit/shallow.hpp"

namespace hsf {

/// Labelled cubes (all the same shape) for training or evaluation.
struct CubeSet {
  std::vector<HyperCube> cubes;
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return cubes.size(); }
  bool empty() const { return cubes.empty(); }
  void add(HyperCube cube, int label, std::string id = {});
};

/// Packs cubes (H x W x B) into an N x B x H x W batch.
Tensor to_batch(std::span<const HyperCube* const> cubes);
Tensor to_batch(const HyperCube& cube);

enum class LossKind { kFocal, kCrossEntropy };
std::string to_string(LossKind k);
LossKind loss_from_string(const std::string& s);

/// -(1 - p_t)^gamma * log(p_t). `probabilities` must sum to 1 within 1e-6.
double focal_loss(std::span<const double> probabilities, int target, double gamma);
double cross_entropy(std::span<const double> probabilities, int target);

struct LossOutput {
  double loss = 0.0;                       // mean over the batch
  Tensor grad;                             // d loss / d logits, N x K
  std::vector<std::vector<double>> probs;  // softmax rows
};

/// Batch-mean loss on logits with its gradient (focal uses `gamma`, cross-entropy ignores it).
LossOutput loss_with_grad(const Tensor& logits, std::span<const int> targets, LossKind kind, double gamma);

struct TrainConfig {
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::kAdaboundLr01;
  std::optional<double> learning_rate;  // unset: the optimizer's default
  LossKind loss = LossKind::kFocal;
  double focal_gamma = 2.0;
  int early_stop_patience = 10;
  int max_epochs = 200;
  bool balanced_sampling = true;
  bool augment = true;
  AugmentationConfig augmentation;
  std::uint64_t seed = 0;
  /// Parameters whose name starts with one of these are left out of the optimizer.
  std::vector<std::string> frozen_prefixes;
  /// Step multipliers for parameters whose name starts with the key.
  std::map<std::string, double> lr_scales;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int stopped_epoch = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  double best_val_accuracy = 0.0;
  std::vector<int> train_class_counts;    // records per class in the training split
  std::vector<double> class_weights;      // sampler weights per record of each class
  std::vector<long> sampled_class_counts;  // draws per class over all epochs
  std::string config_json;
  std::string config_hash;

  std::string to_json() const;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch training with a class-balanced sampler (with replacement), augmentation, early stopping
/// on the validation loss and restore of the best epoch's parameters.
TrainReport train(ClassifierModel& model, const CubeSet& train_set, const CubeSet& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Mean loss and accuracy without augmentation (inference mode).
std::pair<double, double> evaluate_loss(const ClassifierModel& model, const CubeSet& set, LossKind kind, double gamma);

struct EvalReport {
  int n_classes = 3;
  double accuracy = 0.0;
  std::vector<std::vector<long>> confusion;  // rows: true class, columns: predicted
  std::vector<double> precision;
  std::vector<double> recall;
  int tta_views = 1;
  std::vector<int> predictions;
  std::vector<std::vector<double>> probabilities;
  std::string config_hash;

  static EvalReport from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted, int n_classes);
  std::string to_json() const;
};

/// Class probabilities (softmax of the logits) for each cube, no augmentation.
std::vector<std::vector<double>> predict_probabilities(const ClassifierModel& model, const CubeSet& set);

EvalReport evaluate(const ClassifierModel& model, const CubeSet& set);

/// Averages the class probabilities over `views` copies per sample. Views 1-8 are the dihedral
/// transforms (identity, rotations by 90/180/270, horizontal and vertical flip, both diagonal
/// transposes); further views are random augmentations drawn from `aug`.
EvalReport evaluate_tta(const ClassifierModel& model, const CubeSet& set, int views = 8,
                        const AugmentationConfig& aug = {});

/// The i-th deterministic dihedral view (0 = identity, 0..7).
HyperCube dihedral_view(const HyperCube& cube, int index);

/// 64-bit FNV-1a of `text`, as 16 lowercase hex digits.
std::string fnv1a64_hex(const std::string& text);

// ---------------------------------------------------------------------------
// benchmark grid and ablation

enum class Reduction { kFull, kRgb, kPca5 };
std::string to_string(Reduction r);
Reduction reduction_from_string(const std::string& s);

/// Applies a reduction fitted on the training split to all three splits. RGB raises
/// kNoVisibleBand when the camera has no visible coverage; PCA keeps the background at zero.
void apply_reduction(Reduction r, CubeSet& train, CubeSet& val, CubeSet& test, std::uint64_t seed = 0);

/// The PCA used by apply_reduction: 5 components fitted on up to 200k training fruit pixels.
PcaProjection fit_reduction_pca(const CubeSet& train, std::uint64_t seed = 0);
/// One cube through a reduction; `pca` is required for kPca5.
HyperCube reduce_cube(Reduction r, const PcaProjection* pca, const HyperCube& cube);

struct GridTask {
  std::string camera;
  std::string category;
  CubeSet train;
  CubeSet val;
  CubeSet test;
};

struct GridOptions {
  std::vector<std::string> models{"hscnn", "svm", "knn"};  // also: resnet18, alexnet
  std::vector<Reduction> reductions{Reduction::kFull, Reduction::kRgb, Reduction::kPca5};
  TrainConfig train;
  ModelConfig hscnn;
  int tta_views = 8;
  std::vector<std::uint64_t> seeds{0};
};

struct GridCell {
  std::string model;
  std::string reduction;
  std::string category;
  std::string camera;
  bool present = false;
  std::string absent_reason;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // one per seed
  double accuracy = 0.0;           // mean over seeds
  std::string hyperparameters;     // JSON
};

struct BenchmarkTable {
  std::vector<GridCell> cells;
  std::string to_csv() const;
  std::string to_json() const;
};

using GridLog = std::function<void(const std::string&)>;

BenchmarkTable run_benchmark_grid(const std::vector<GridTask>& tasks, const GridOptions& options, const GridLog& log = {});

struct AblationRow {
  std::string value;
  std::vector<double> accuracies;  // one per paired seed
  double mean_accuracy = 0.0;
};

struct AblationTable {
  std::string axis;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationRow> rows;
  std::string to_csv() const;
  std::string to_json() const;
};

/// The values an ablation axis toggles between: pooling, head, conv_type, loss, optimizer,
/// rotation, flip, noise, random_cut.
std::vector<std::string> ablation_values(const std::string& axis);

/// Trains one HS-CNN per axis value and seed (same seeds for every value) and reports TTA test accuracy.
AblationTable run_ablation(const std::string& axis, const CubeSet& train_set, const CubeSet& val_set,
                           const CubeSet& test_set, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                           const std::vector<std::uint64_t>& seeds, int tta_views = 8, const GridLog& log = {});

}  // namespace hsf
