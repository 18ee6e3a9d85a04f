#include "hsfruit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "hsfruit/error.hpp"

namespace hsf {

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  require(image.height > 0 && image.width > 0, ErrorCode::kInvalidArgument, "cannot write an empty image");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(image.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width * 3; ++x) {
      const float v = std::clamp(image.data[static_cast<std::size_t>(y) * image.width * 3 + x], 0.0f, 1.0f);
      row[x] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage heat_map(std::span<const double> values, int height, int width, bool signed_map) {
  require(values.size() == static_cast<std::size_t>(height) * width, ErrorCode::kShapeMismatch,
          "heat map size mismatch");
  RgbImage img(height, width);
  double scale = 0.0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) scale = 1.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double t = values[i] / scale;
    float r, g, b;
    if (signed_map) {
      // blue (negative) - white (zero) - red (positive)
      if (t >= 0) {
        r = 1.0f;
        g = b = static_cast<float>(1.0 - t);
      } else {
        b = 1.0f;
        r = g = static_cast<float>(1.0 + t);
      }
    } else {
      const double a = std::abs(t);
      r = static_cast<float>(std::min(1.0, 2.0 * a));
      g = static_cast<float>(std::clamp(2.0 * a - 0.5, 0.0, 1.0));
      b = static_cast<float>(std::clamp(4.0 * a - 3.0, 0.0, 1.0));
    }
    img.data[i * 3] = r;
    img.data[i * 3 + 1] = g;
    img.data[i * 3 + 2] = b;
  }
  return img;
}

RgbImage line_plot(std::span<const double> x, std::span<const std::vector<double>> series, int height, int width) {
  require(!x.empty(), ErrorCode::kInvalidArgument, "line plot needs at least one point");
  RgbImage img(height, width);
  std::fill(img.data.begin(), img.data.end(), 1.0f);
  const int margin = 30;
  const double x0 = x.front(), x1 = x.back() > x.front() ? x.back() : x.front() + 1.0;
  double y0 = 0.0, y1 = 0.0;
  for (const auto& s : series)
    for (double v : s) {
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  if (y1 == y0) y1 = y0 + 1.0;
  auto px = [&](double v) { return margin + static_cast<int>((v - x0) / (x1 - x0) * (width - 2 * margin)); };
  auto py = [&](double v) { return height - margin - static_cast<int>((v - y0) / (y1 - y0) * (height - 2 * margin)); };
  auto put = [&](int yy, int xx, float r, float g, float b) {
    if (yy < 0 || xx < 0 || yy >= height || xx >= width) return;
    img.at(yy, xx, 0) = r;
    img.at(yy, xx, 1) = g;
    img.at(yy, xx, 2) = b;
  };
  for (int xx = margin; xx < width - margin; ++xx) put(py(0.0), xx, 0.6f, 0.6f, 0.6f);
  for (int yy = margin; yy < height - margin; ++yy) put(yy, margin, 0.0f, 0.0f, 0.0f);
  for (int xx = margin; xx < width - margin; ++xx) put(height - margin, xx, 0.0f, 0.0f, 0.0f);
  static const float colors[][3] = {{0.85f, 0.1f, 0.1f}, {0.1f, 0.3f, 0.85f}, {0.1f, 0.6f, 0.2f}};
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const float* c = colors[si % 3];
    for (std::size_t i = 1; i < s.size() && i < x.size(); ++i) {
      const int ax = px(x[i - 1]), ay = py(s[i - 1]), bx = px(x[i]), by = py(s[i]);
      const int steps = std::max({std::abs(bx - ax), std::abs(by - ay), 1});
      for (int k = 0; k <= steps; ++k) {
        const double f = static_cast<double>(k) / steps;
        put(static_cast<int>(std::lround(ay + f * (by - ay))), static_cast<int>(std::lround(ax + f * (bx - ax))), c[0],
            c[1], c[2]);
      }
    }
  }
  return img;
}

}  // namespace hsf
