#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hsfruit/models.hpp"
#include "hsfruit/spectral.hpp"

namespace hsf {

struct AttributionResult {
  HyperCube values;  // signed attribution per input element, H x W x B
  int target_class = 0;
  std::string baseline = "zero";
  int steps = 0;
  double f_input = 0.0;     // pre-softmax score of the target class at the input
  double f_baseline = 0.0;  // ... and at the baseline
  double attribution_sum = 0.0;
  double completeness_gap = 0.0;  // |sum - (f_input - f_baseline)|
};

/// Integrated gradients of the target logit along the straight path from `baseline` to `cube`,
/// midpoint rule with `steps` points; gradients are accumulated in double. A null baseline
/// means the all-zero cube. The model is not modified.
AttributionResult integrated_gradients(const ClassifierModel& model, const HyperCube& cube, int target_class,
                                       const HyperCube* baseline = nullptr, int steps = 128, int batch = 16);

struct SpatialImpact {
  int height = 0;
  int width = 0;
  std::vector<double> signed_sum;    // per pixel, sum over bands
  std::vector<double> absolute_sum;  // per pixel, sum of |attribution| over bands
};

struct SpectralImpact {
  std::vector<double> wavelength_nm;
  std::vector<double> signed_sum;    // per band, sum over pixels
  std::vector<double> absolute_sum;

  /// Share of the total absolute mass within +-`half_width_nm` of `center_nm`.
  double mass_fraction_near(double center_nm, double half_width_nm) const;
  std::string to_csv() const;
};

SpatialImpact spatial_impact(const AttributionResult& attr);
SpectralImpact spectral_impact(const AttributionResult& attr);

/// Heat maps (signed and absolute), the spectral CSV and its line plot, plus a JSON summary.
void write_attribution_outputs(const AttributionResult& attr, const std::filesystem::path& dir,
                               const std::string& stem = "attribution");

}  // namespace hsf
