#include "hsfruit/attribution.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hsfruit/image.hpp"
#include "hsfruit/train_eval.hpp"

namespace hsf {

AttributionResult integrated_gradients(const ClassifierModel& model_in, const HyperCube& cube, int target,
                                       const HyperCube* baseline, int steps, int batch) {
  require(steps >= 1, ErrorCode::kInvalidArgument, "integrated gradients needs at least one step");
  require(batch >= 1, ErrorCode::kInvalidArgument, "batch must be >= 1");
  require(target >= 0 && target < model_in.config().n_classes, ErrorCode::kOutOfRange, "target class out of range");
  require(cube.bands() == model_in.config().in_bands, ErrorCode::kShapeMismatch,
          "cube has " + std::to_string(cube.bands()) + " bands, model expects " +
              std::to_string(model_in.config().in_bands));
  HyperCube zero;
  if (!baseline) {
    zero = HyperCube(cube.height(), cube.width(), cube.axis());
    baseline = &zero;
  }
  require(baseline->same_shape(cube), ErrorCode::kShapeMismatch, "baseline shape differs from the input");

  ClassifierModel model = model_in;  // forward/backward caches stay private to this call
  const Tensor x = to_batch(cube);
  const Tensor x0 = to_batch(*baseline);
  const std::size_t per = x.size();
  const int k = model.config().n_classes;
  std::vector<double> acc(per, 0.0);

  for (int s0 = 0; s0 < steps; s0 += batch) {
    const int nb = std::min(batch, steps - s0);
    std::vector<int> shape = x.shape();
    shape[0] = nb;
    Tensor path(shape);
    for (int i = 0; i < nb; ++i) {
      const double a = (s0 + i + 0.5) / steps;
      float* dst = path.data() + static_cast<std::size_t>(i) * per;
      for (std::size_t e = 0; e < per; ++e) dst[e] = static_cast<float>(x0[e] + a * (static_cast<double>(x[e]) - x0[e]));
    }
    const Tensor logits = model.forward(path, false);
    Tensor g({nb, k});
    for (int i = 0; i < nb; ++i) g[static_cast<std::size_t>(i) * k + target] = 1.0f;
    const Tensor dx = model.backward(g, true);
    for (int i = 0; i < nb; ++i) {
      const float* src = dx.data() + static_cast<std::size_t>(i) * per;
      for (std::size_t e = 0; e < per; ++e) acc[e] += src[e];
    }
  }

  AttributionResult r;
  r.target_class = target;
  r.baseline = baseline == &zero ? "zero" : "custom";
  r.steps = steps;
  r.values = HyperCube(cube.height(), cube.width(), cube.axis());
  // tensor layout is B x H x W; the result is band-last
  const int b = cube.bands();
  const std::size_t plane = cube.pixel_count();
  double sum = 0.0;
  for (int band = 0; band < b; ++band)
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t e = band * plane + p;
      const double v = (static_cast<double>(x[e]) - x0[e]) * acc[e] / steps;
      r.values.data()[p * b + band] = static_cast<float>(v);
      sum += v;
    }
  r.f_input = model.infer(x)[target];
  r.f_baseline = model.infer(x0)[target];
  r.attribution_sum = sum;
  r.completeness_gap = std::abs(sum - (r.f_input - r.f_baseline));
  return r;
}

SpatialImpact spatial_impact(const AttributionResult& attr) {
  const auto& v = attr.values;
  SpatialImpact s;
  s.height = v.height();
  s.width = v.width();
  s.signed_sum.assign(v.pixel_count(), 0.0);
  s.absolute_sum.assign(v.pixel_count(), 0.0);
  for (int y = 0; y < v.height(); ++y)
    for (int x = 0; x < v.width(); ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * v.width() + x;
      for (float a : v.pixel(y, x)) {
        s.signed_sum[p] += a;
        s.absolute_sum[p] += std::abs(a);
      }
    }
  return s;
}

SpectralImpact spectral_impact(const AttributionResult& attr) {
  const auto& v = attr.values;
  SpectralImpact s;
  s.wavelength_nm = v.axis().values();
  s.signed_sum.assign(v.bands(), 0.0);
  s.absolute_sum.assign(v.bands(), 0.0);
  for (int y = 0; y < v.height(); ++y)
    for (int x = 0; x < v.width(); ++x) {
      const auto px = v.pixel(y, x);
      for (int b = 0; b < v.bands(); ++b) {
        s.signed_sum[b] += px[b];
        s.absolute_sum[b] += std::abs(px[b]);
      }
    }
  return s;
}

double SpectralImpact::mass_fraction_near(double center, double half_width) const {
  double in = 0.0, total = 0.0;
  for (std::size_t b = 0; b < absolute_sum.size(); ++b) {
    total += absolute_sum[b];
    if (std::abs(wavelength_nm[b] - center) <= half_width) in += absolute_sum[b];
  }
  return total > 0.0 ? in / total : 0.0;
}

std::string SpectralImpact::to_csv() const {
  std::ostringstream os;
  os << "wavelength_nm,signed,absolute\n";
  char buf[96];
  for (std::size_t b = 0; b < wavelength_nm.size(); ++b) {
    std::snprintf(buf, sizeof buf, "%.4f,%.9g,%.9g\n", wavelength_nm[b], signed_sum[b], absolute_sum[b]);
    os << buf;
  }
  return os.str();
}

void write_attribution_outputs(const AttributionResult& attr, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  const auto sp = spatial_impact(attr);
  write_png(heat_map(sp.signed_sum, sp.height, sp.width, true), dir / (stem + "_spatial_signed.png"));
  write_png(heat_map(sp.absolute_sum, sp.height, sp.width, false), dir / (stem + "_spatial_abs.png"));
  const auto spec = spectral_impact(attr);
  {
    std::ofstream f(dir / (stem + "_spectral.csv"));
    require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + (dir / (stem + "_spectral.csv")).string());
    f << spec.to_csv();
  }
  const std::vector<std::vector<double>> series{spec.signed_sum, spec.absolute_sum};
  write_png(line_plot(spec.wavelength_nm, series), dir / (stem + "_spectral.png"));
  nlohmann::json j{{"target_class", attr.target_class},   {"baseline", attr.baseline},
                   {"steps", attr.steps},                 {"f_input", attr.f_input},
                   {"f_baseline", attr.f_baseline},       {"attribution_sum", attr.attribution_sum},
                   {"completeness_gap", attr.completeness_gap}};
  std::ofstream f(dir / (stem + ".json"));
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write attribution summary");
  f << j.dump(2) << '\n';
}

}  // namespace hsf
