#include "hsfruit/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hsf {

WavelengthAxis::WavelengthAxis(std::vector<double> nm) : nm_(std::move(nm)) {
  require(!nm_.empty(), ErrorCode::kInvalidArgument, "wavelength axis must have at least one band");
  for (std::size_t i = 0; i < nm_.size(); ++i) {
    require(std::isfinite(nm_[i]), ErrorCode::kInvalidArgument, "wavelength axis contains a non-finite value");
    if (i > 0) {
      require(nm_[i] > nm_[i - 1], ErrorCode::kInvalidArgument,
              "wavelength axis must be strictly increasing (band " + std::to_string(i) + ")");
    }
  }
}

WavelengthAxis WavelengthAxis::linspace(double low_nm, double high_nm, int count) {
  require(count >= 1, ErrorCode::kInvalidArgument, "band count must be positive");
  std::vector<double> nm(static_cast<std::size_t>(count));
  if (count == 1) {
    nm[0] = low_nm;
  } else {
    require(high_nm > low_nm, ErrorCode::kInvalidArgument, "wavelength range must satisfy low < high");
    const double step = (high_nm - low_nm) / (count - 1);
    for (int i = 0; i < count; ++i) nm[i] = low_nm + step * i;
    nm.back() = high_nm;
  }
  return WavelengthAxis(std::move(nm));
}

int WavelengthAxis::nearest_band(double nm) const {
  auto it = std::lower_bound(nm_.begin(), nm_.end(), nm);
  if (it == nm_.begin()) return 0;
  if (it == nm_.end()) return static_cast<int>(nm_.size()) - 1;
  const auto hi = static_cast<int>(it - nm_.begin());
  return (nm - nm_[hi - 1] <= nm_[hi] - nm) ? hi - 1 : hi;
}

CameraProfile CameraProfile::by_name(const std::string& name) {
  if (name == "specim_fx10") return specim_fx10();
  if (name == "redeye_17") return redeye_17();
  fail(ErrorCode::kInvalidArgument, "unknown camera profile '" + name + "'");
}

Volume::Volume(int height, int width, WavelengthAxis axis)
    : height_(height), width_(width), axis_(std::move(axis)) {
  require(height >= 0 && width >= 0, ErrorCode::kInvalidArgument, "negative spatial extent");
  data_.assign(pixel_count() * axis_.size(), 0.0f);
}

Volume::Volume(int height, int width, WavelengthAxis axis, std::vector<float> data)
    : height_(height), width_(width), axis_(std::move(axis)), data_(std::move(data)) {
  require(height >= 0 && width >= 0, ErrorCode::kInvalidArgument, "negative spatial extent");
  require(data_.size() == pixel_count() * axis_.size(), ErrorCode::kShapeMismatch,
          "volume payload does not match H x W x B");
}

RawFrame::RawFrame(int height, int width, WavelengthAxis axis, std::vector<float> data)
    : Volume(height, width, std::move(axis), std::move(data)) {
  for (float v : data_) {
    require(v >= 0.0f, ErrorCode::kInvalidArgument, "raw frame contains a negative count");
  }
}

HyperCube::HyperCube(int height, int width, WavelengthAxis axis, std::vector<float> data)
    : Volume(height, width, std::move(axis), std::move(data)) {
  for (float v : data_) {
    require(std::isfinite(v), ErrorCode::kInvalidArgument, "hypercube contains a non-finite value");
  }
}

RawFrame average_references(std::span<const RawFrame> frames) {
  require(!frames.empty(), ErrorCode::kInvalidArgument, "no reference frames to average");
  const RawFrame& first = frames.front();
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!frames[i].same_shape(first)) {
      fail(ErrorCode::kShapeMismatch, "reference frame " + std::to_string(i) + " does not match frame 0 in shape/axis");
    }
  }
  const std::size_t n = first.data().size();
  std::vector<double> acc(n, 0.0);
  for (const RawFrame& f : frames) {
    auto d = f.data();
    for (std::size_t i = 0; i < n; ++i) acc[i] += d[i];
  }
  std::vector<float> out(n);
  const double inv = 1.0 / static_cast<double>(frames.size());
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i] * inv);
  return RawFrame(first.height(), first.width(), first.axis(), std::move(out));
}

HyperCube calibrate(const RawFrame& raw, const RawFrame& white, const RawFrame& dark) {
  require(raw.same_shape(white), ErrorCode::kShapeMismatch, "white reference does not match raw frame shape/axis");
  require(raw.same_shape(dark), ErrorCode::kShapeMismatch, "dark reference does not match raw frame shape/axis");
  HyperCube cube(raw.height(), raw.width(), raw.axis());
  std::vector<std::uint8_t> valid(raw.pixel_count(), 1);
  auto r = raw.data();
  auto w = white.data();
  auto d = dark.data();
  auto out = cube.data();
  const std::size_t bands = raw.axis().size();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double denom = static_cast<double>(w[i]) - d[i];
    if (denom == 0.0) {
      out[i] = 0.0f;
      valid[i / bands] = 0;
    } else {
      out[i] = static_cast<float>((static_cast<double>(r[i]) - d[i]) / denom);
    }
  }
  cube.mask = std::move(valid);
  return cube;
}

std::vector<float> spectrum_at(const HyperCube& cube, int x, int y) {
  if (x < 0 || y < 0 || x >= cube.width() || y >= cube.height()) {
    std::ostringstream os;
    os << "pixel (" << x << ", " << y << ") outside " << cube.width() << " x " << cube.height() << " cube";
    fail(ErrorCode::kOutOfRange, os.str());
  }
  auto px = cube.pixel(y, x);
  return {px.begin(), px.end()};
}

}  // namespace hsf
