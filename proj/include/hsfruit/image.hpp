#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace hsf {

/// Interleaved 3-channel float image (index = (y * W + x) * 3 + c), values nominally in [0, 1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Writes an 8-bit RGB PNG; values are clipped to [0, 1].
void write_png(const RgbImage& image, const std::filesystem::path& path);

/// Maps a scalar H x W field to a diverging blue-white-red image symmetric around zero
/// (or a black-to-yellow ramp when `signed_map` is false).
RgbImage heat_map(std::span<const double> values, int height, int width, bool signed_map);

/// Renders a simple line plot of y over x with axes into an image.
RgbImage line_plot(std::span<const double> x, std::span<const std::vector<double>> series, int height = 360,
                   int width = 640);

}  // namespace hsf
