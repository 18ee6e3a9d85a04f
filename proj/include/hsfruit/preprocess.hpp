#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "hsfruit/image.hpp"
#include "hsfruit/nn.hpp"
#include "hsfruit/spectral.hpp"

namespace hsf {

/// H x W fruit/background labels (1 = fruit).
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
};

/// Row-major N x B block of spectra.
struct SpectraMatrix {
  int bands = 0;
  std::vector<float> data;

  std::size_t rows() const { return bands == 0 ? 0 : data.size() / static_cast<std::size_t>(bands); }
  std::span<const float> row(std::size_t i) const { return {data.data() + i * bands, static_cast<std::size_t>(bands)}; }
  void append(std::span<const float> spectrum);
};

// ---------------------------------------------------------------------------
// Background segmentation

struct LabeledPixels {
  SpectraMatrix spectra;
  std::vector<std::uint8_t> is_fruit;  // one per row
};

struct PixelClassifierOptions {
  int hidden_units = 16;
  int epochs = 40;
  int batch_size = 256;
  double learning_rate = 1e-2;
  double holdout_fraction = 0.2;
  std::size_t max_training_pixels = 60000;
  std::uint64_t seed = 7;
};

/// One-hidden-layer per-pixel network B -> hidden -> 1 with a sigmoid output.
/// Inputs are standardised with per-band statistics from its training pixels.
class PixelClassifier {
 public:
  PixelClassifier() = default;
  PixelClassifier(int bands, int hidden_units, std::uint64_t seed);

  int bands() const { return bands_; }
  double heldout_accuracy() const { return heldout_accuracy_; }

  /// P(fruit) for one spectrum; always in [0, 1].
  double probability(std::span<const float> spectrum) const;
  /// P(fruit) for every pixel of the cube (row-major H x W).
  std::vector<double> probability_map(const HyperCube& cube) const;

  /// Trainable network and normalisation, exposed for training and serialisation.
  nn::Sequential& network() { return net_; }
  std::vector<float>& band_mean() { return mean_; }
  std::vector<float>& band_scale() { return inv_std_; }
  void set_heldout_accuracy(double a) { heldout_accuracy_ = a; }

  /// A classifier that reports `p` for every pixel (testing and degenerate setups).
  static PixelClassifier constant(int bands, double p);

 private:
  int bands_ = 0;
  nn::Sequential net_;
  std::vector<float> mean_;
  std::vector<float> inv_std_;
  double heldout_accuracy_ = 0.0;
};

/// Throws kSingleClass when only one class is present.
PixelClassifier train_background_classifier(const LabeledPixels& pixels, const PixelClassifierOptions& options = {});

/// Pixels with P(fruit) strictly above `threshold`, reduced to the largest 4-connected component.
BinaryMask segment(const HyperCube& cube, const PixelClassifier& classifier, double threshold = 0.5);

/// Largest 4-connected component of a mask (first in raster order on ties).
BinaryMask largest_component(const BinaryMask& mask);

/// Tight bounding box of the mask; pixels outside the mask are exactly 0 in every band.
HyperCube crop_to_fruit(const HyperCube& cube, const BinaryMask& mask);

/// Per-band bilinear interpolation with half-pixel centres and edge clamping.
HyperCube resize(const HyperCube& cube, int out_h = 64, int out_w = 64);

// ---------------------------------------------------------------------------
// RGB reduction

/// Precomputed band -> linear sRGB weights for one wavelength axis. A spectrum is integrated
/// against the CIE 1931 2-degree colour-matching functions over the visible overlap,
/// normalised so unit reflectance maps to the D65 white, then converted to linear sRGB.
class RgbProjector {
 public:
  explicit RgbProjector(const WavelengthAxis& axis);

  /// Linear sRGB before clipping (linear in the spectrum).
  std::array<double, 3> linear_rgb(std::span<const float> spectrum) const;
  const std::vector<std::array<double, 3>>& weights() const { return weights_; }

 private:
  std::vector<std::array<double, 3>> weights_;  // per band
};

/// Clip negatives, then scale the whole image so its maximum channel value is 1.
/// Throws kNoVisibleBand when the axis does not overlap 380-740 nm.
RgbImage to_rgb(const HyperCube& cube);

/// RGB image as a 3-band cube (axis = channel index 0, 1, 2 for R, G, B).
HyperCube rgb_as_cube(const RgbImage& image);

// ---------------------------------------------------------------------------
// PCA reduction

struct PcaProjection {
  std::vector<double> mean;                    // B
  std::vector<std::vector<double>> components;  // k x B, orthonormal rows
  std::vector<double> eigenvalues;              // k, nonincreasing
  std::vector<double> explained_variance_ratio; // k
  double total_variance = 0.0;

  int bands() const { return static_cast<int>(mean.size()); }
  int k() const { return static_cast<int>(components.size()); }
  std::vector<double> project(std::span<const float> spectrum) const;
};

/// Top-k principal components of the rows of `pixels` (sample covariance, 1/(n-1)).
/// Throws kInvalidArgument when k > B and kInsufficientData when the centred rank is below k.
PcaProjection fit_pca(const SpectraMatrix& pixels, int k = 5);

/// Subtracts the mean and projects every pixel; output cube has k channels (axis = index).
HyperCube apply_pca(const PcaProjection& projection, const HyperCube& cube);

/// Non-zero (fruit) pixels from `cubes`, uniformly subsampled to at most `max_pixels`.
SpectraMatrix collect_fruit_pixels(std::span<const HyperCube> cubes, std::size_t max_pixels, std::uint64_t seed);

/// True when any band of the pixel is non-zero.
bool is_foreground(std::span<const float> spectrum);

}  // namespace hsf
