#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "hsfruit/dataset.hpp"
#include "hsfruit/preprocess.hpp"

namespace hsf {

/// Which spectral features depend on the ripeness t.
enum class SynthSignal {
  kRipening,  // chlorophyll dip (fades with t) and an NIR reflectance shift above the pivot
  kBand900,   // a single bump centred on `band_center_nm`, nothing else varies with t
};
std::string to_string(SynthSignal s);
SynthSignal synth_signal_from_string(const std::string& s);

struct SynthSpec {
  WavelengthAxis axis = CameraProfile::specim_fx10().axis();
  std::string camera = "specim_fx10";
  Fruit fruit = Fruit::kAvocado;
  int height = 64;
  int width = 64;
  double t = 0.5;  // ripeness in [0, 1]
  SynthSignal signal = SynthSignal::kRipening;

  double dip_center_nm = 680.0;
  double dip_half_width_nm = 40.0;  // raised-cosine support
  double dip_depth = 0.08;          // at t = 0
  double nir_pivot_nm = 800.0;
  double nir_ramp_nm = 60.0;
  double nir_shift = 0.12;  // reflectance change above the pivot between t = 0 and t = 1

  double band_center_nm = 900.0;
  double band_half_width_nm = 25.0;
  double band_amplitude = 0.15;

  double noise_sigma = 0.01;
  /// Ellipse centre and radii as fractions of height/width; angle in radians.
  double center_y = 0.5, center_x = 0.5, radius_y = 0.36, radius_x = 0.30, angle = 0.0;
  double brightness = 1.0;  // global multiplier of the fruit spectrum
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthSample {
  HyperCube cube;  // zero background
  LabelRecord record;
  BinaryMask mask;  // exact fruit footprint
};

/// Noise-free fruit reflectance at ripeness t for every band, before shading.
std::vector<double> synth_spectrum(const SynthSpec& spec, double t);

/// Bands at which the spectrum may depend on t.
std::vector<bool> synth_signal_bands(const SynthSpec& spec);

SynthSample generate_cube(const SynthSpec& spec);

/// Firmness that maps t = 1/3 and t = 2/3 onto the fruit's two firmness thresholds.
double synth_firmness(Fruit fruit, double t);
/// Soluble solids 14 + 4.5 t (crosses 15.5 at t = 1/3 and 17 at t = 2/3).
double synth_brix(double t);
/// 0 for t < 1/3, 2 for t > 2/3, else 1.
int synth_class(double t);

struct SynthDatasetOptions {
  int n = 30;
  std::array<double, 3> balance{1.0 / 3, 1.0 / 3, 1.0 / 3};
  CameraProfile camera = CameraProfile::specim_fx10();
  Fruit fruit = Fruit::kAvocado;
  SynthSignal signal = SynthSignal::kRipening;
  int size = 64;
  double noise_sigma = 0.01;
  double t_margin = 0.04;  // distance kept from the class boundaries
  double band_amplitude = 0.15;
  std::uint64_t seed = 0;
};

struct SynthDataset {
  std::vector<SynthSample> samples;
  std::vector<int> classes;
  std::vector<double> t;
};

/// n cubes with per-class counts from the largest-remainder apportionment of `balance`.
/// Shape, position and brightness vary per record.
SynthDataset generate_dataset(const SynthDatasetOptions& options);

/// Writes each cube as ENVI (<id>.hdr/.bin), each mask as a 1-band ENVI cube (<id>_mask), and
/// manifest.csv. Returns the records as written.
std::vector<LabelRecord> write_dataset(const SynthDataset& data, const std::filesystem::path& dir);

struct RawSceneOptions {
  int margin = 16;                  // background border added around the cube
  double background_reflectance = 0.06;
  double white_counts = 3800.0;
  double dark_counts = 180.0;
  double count_noise = 4.0;         // std of sensor noise in counts
  std::uint64_t seed = 0;
};

struct RawScene {
  RawFrame raw;
  RawFrame white;
  RawFrame dark;
  BinaryMask fruit_mask;  // in scene coordinates
};

/// A raw recording of the sample on a flat grey tray plus matching white and dark references,
/// so the calibration and segmentation stages can run on synthetic input.
RawScene render_raw_scene(const SynthSample& sample, const RawSceneOptions& options = {});

}  // namespace hsf
