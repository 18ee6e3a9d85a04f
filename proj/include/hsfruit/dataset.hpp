#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hsfruit/spectral.hpp"

namespace hsf {

enum class Fruit { kAvocado, kKiwi };
enum class Side { kFront, kBack };
enum class Category { kFirmness, kSweetness, kRipeness };
enum class Subset { kTrain, kVal, kTest };

inline constexpr int kNumClasses = 3;  // 0 = under, 1 = perfect, 2 = over

std::string to_string(Fruit f);
std::string to_string(Side s);
std::string to_string(Category c);
std::string to_string(Subset s);
Fruit fruit_from_string(const std::string& s);
Side side_from_string(const std::string& s);
Category category_from_string(const std::string& s);
Subset subset_from_string(const std::string& s);

/// "too hard" / "perfect" / "too soft" and the sweetness and ripeness equivalents.
std::string class_name(Category category, int class_index);

struct LabelRecord {
  std::string recording_id;
  Fruit fruit = Fruit::kAvocado;
  std::string camera = "specim_fx10";
  int day = 0;
  int series = 1;
  Side side = Side::kFront;
  /// Physical fruit identity; records sharing it never straddle splits. Empty = the recording id.
  std::string fruit_id;
  std::optional<double> firmness_g_cm2;
  std::optional<double> sugar_brix;
  std::optional<int> ripeness_state;  // 0 unripe, 1 perfect, 2 overripe
  /// Cube location, relative to the manifest directory unless absolute.
  std::string path;

  const std::string& group() const { return fruit_id.empty() ? recording_id : fruit_id; }
  /// Throws kInvalidArgument on violated record invariants.
  void validate() const;
};

struct ClassLabel {
  Category category = Category::kFirmness;
  int class_index = 1;
  bool operator==(const ClassLabel&) const = default;
};

/// Values exactly on a threshold are "perfect".
ClassLabel assign_firmness_class(Fruit fruit, double firmness_g_cm2);
ClassLabel assign_sweetness_class(Fruit fruit, double brix);
ClassLabel assign_ripeness_class(int ripeness_state);

/// Class of `record` for `category`, or nothing when the record carries no such label.
std::optional<ClassLabel> label_for(const LabelRecord& record, Category category);

// ---------------------------------------------------------------------------
// manifest

std::vector<LabelRecord> load_manifest(const std::filesystem::path& path);  // .csv or .json
void save_manifest(const std::vector<LabelRecord>& records, const std::filesystem::path& path);
std::string manifest_csv(const std::vector<LabelRecord>& records);

// ---------------------------------------------------------------------------
// split and balance

struct SplitRatios {
  double train = 0.75;
  double val = 0.125;
  double test = 0.125;
};

struct SplitAssignment {
  std::map<std::string, Subset> subset;  // recording_id -> subset
  std::uint64_t seed = 0;
  Category category = Category::kFirmness;

  std::vector<std::string> ids(Subset s) const;
  std::size_t count(Subset s) const;
  std::string to_json() const;
  static SplitAssignment from_json(const std::string& text);
};

/// Stratified split of the records labelled for `category`. Per-class counts follow
/// largest-remainder apportionment of the ratios (with the overall totals apportioned the
/// same way), records of one physical fruit stay together, and the result depends only on
/// the records and the seed. Throws kInsufficientData naming any class with fewer than 3 fruits.
SplitAssignment split(const std::vector<LabelRecord>& records, Category category, std::uint64_t seed,
                      const SplitRatios& ratios = {});

/// Largest-remainder apportionment of n items over the given ratios.
std::array<int, 3> apportion(int n, const SplitRatios& ratios);

/// Per-record sampling weights proportional to 1/n_c so that every class carries equal total weight
/// (each class sums to 1/K). Throws kInsufficientData when one of the `num_classes` is empty.
std::vector<double> balance(const std::vector<int>& class_of_record, int num_classes = kNumClasses);

// ---------------------------------------------------------------------------
// augmentation

struct AugmentationConfig {
  bool rotation = true;
  bool flip = true;
  bool noise = true;
  bool random_cut = true;
  double probability = 0.5;  // per operation
  double noise_sigma = 0.1;  // relative to the per-band reference std
  double cut_min = 0.7;      // sub-rectangle extent per spatial dimension
  double cut_max = 1.0;
  /// Per-band reference std for the noise (e.g. from training pixels). Empty: the cube's own band std.
  std::vector<float> reference_std;
  std::uint64_t seed = 0;

  void validate() const;
  bool any() const { return rotation || flip || noise || random_cut; }
};

using AugmentRng = std::mt19937_64;

HyperCube rotate90(const HyperCube& cube, int quarter_turns);
HyperCube flip_horizontal(const HyperCube& cube);
HyperCube flip_vertical(const HyperCube& cube);
/// Sub-rectangle [y0, y0+h) x [x0, x0+w).
HyperCube crop(const HyperCube& cube, int y0, int x0, int h, int w);

/// Rotation by k x 90 degrees, independent horizontal/vertical flips, additive Gaussian noise and
/// crop-and-resize, each applied with probability `cfg.probability`. Output has the input size.
HyperCube augment(const HyperCube& cube, const AugmentationConfig& cfg, AugmentRng& rng);

/// Per-band standard deviation over the non-zero pixels of the cubes.
std::vector<float> band_reference_std(const std::vector<HyperCube>& cubes);

}  // namespace hsf
