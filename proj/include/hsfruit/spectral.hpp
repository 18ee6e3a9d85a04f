#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsfruit/error.hpp"

namespace hsf {

/// Band centre wavelengths in nm. Strictly increasing, finite, non-empty.
class WavelengthAxis {
 public:
  WavelengthAxis() = default;
  explicit WavelengthAxis(std::vector<double> nm);

  /// `count` evenly spaced bands from `low_nm` to `high_nm` inclusive.
  static WavelengthAxis linspace(double low_nm, double high_nm, int count);

  std::size_t size() const noexcept { return nm_.size(); }
  bool empty() const noexcept { return nm_.empty(); }
  double operator[](std::size_t i) const { return nm_[i]; }
  double front() const { return nm_.front(); }
  double back() const { return nm_.back(); }
  const std::vector<double>& values() const noexcept { return nm_; }

  /// Index of the band whose centre is closest to `nm`.
  int nearest_band(double nm) const;

  bool operator==(const WavelengthAxis&) const = default;

 private:
  std::vector<double> nm_;
};

struct CameraProfile {
  std::string name;
  int band_count = 0;
  double low_nm = 0.0;
  double high_nm = 0.0;

  WavelengthAxis axis() const { return WavelengthAxis::linspace(low_nm, high_nm, band_count); }

  static CameraProfile specim_fx10() { return {"specim_fx10", 224, 400.0, 1000.0}; }
  static CameraProfile redeye_17() { return {"redeye_17", 252, 950.0, 1700.0}; }
  /// Looks up a profile by its manifest name; throws kInvalidArgument when unknown.
  static CameraProfile by_name(const std::string& name);
};

/// H x W x B samples stored band-last (index = (y * W + x) * B + b).
class Volume {
 public:
  Volume() = default;
  Volume(int height, int width, WavelengthAxis axis);
  Volume(int height, int width, WavelengthAxis axis, std::vector<float> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int bands() const noexcept { return static_cast<int>(axis_.size()); }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  const WavelengthAxis& axis() const noexcept { return axis_; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  std::size_t index(int y, int x, int b) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * bands() + b;
  }
  float& at(int y, int x, int b) noexcept { return data_[index(y, x, b)]; }
  float at(int y, int x, int b) const noexcept { return data_[index(y, x, b)]; }

  std::span<float> pixel(int y, int x) noexcept { return {data_.data() + index(y, x, 0), axis_.size()}; }
  std::span<const float> pixel(int y, int x) const noexcept {
    return {data_.data() + index(y, x, 0), axis_.size()};
  }

  bool same_shape(const Volume& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_ && axis_ == other.axis_;
  }

 protected:
  int height_ = 0;
  int width_ = 0;
  WavelengthAxis axis_;
  std::vector<float> data_;
};

/// Raw sensor counts before referencing. Values are non-negative.
class RawFrame : public Volume {
 public:
  RawFrame() = default;
  RawFrame(int height, int width, WavelengthAxis axis) : Volume(height, width, std::move(axis)) {}
  RawFrame(int height, int width, WavelengthAxis axis, std::vector<float> data);
};

/// Reflectance volume. The optional mask flags pixels whose every band was calibrated
/// against a non-degenerate reference (1 = valid).
class HyperCube : public Volume {
 public:
  HyperCube() = default;
  HyperCube(int height, int width, WavelengthAxis axis) : Volume(height, width, std::move(axis)) {}
  HyperCube(int height, int width, WavelengthAxis axis, std::vector<float> data);

  std::optional<std::vector<std::uint8_t>> mask;
};

/// Element-wise mean of reference recordings (white or dark averaging).
RawFrame average_references(std::span<const RawFrame> frames);

/// Flat-field correction (raw - dark) / (white - dark). Elements with white == dark become 0
/// and their pixel is marked invalid in the returned mask.
HyperCube calibrate(const RawFrame& raw, const RawFrame& white, const RawFrame& dark);

/// The B reflectance values at column x, row y.
std::vector<float> spectrum_at(const HyperCube& cube, int x, int y);

}  // namespace hsf
