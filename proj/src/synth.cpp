#include "hsfruit/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "hsfruit/envi_io.hpp"

namespace hsf {

std::string to_string(SynthSignal s) { return s == SynthSignal::kRipening ? "ripening" : "band900"; }

SynthSignal synth_signal_from_string(const std::string& s) {
  if (s == "ripening") return SynthSignal::kRipening;
  if (s == "band900" || s == "band") return SynthSignal::kBand900;
  fail(ErrorCode::kInvalidArgument, "unknown synthetic signal '" + s + "' (expected ripening or band900)");
}

void SynthSpec::validate() const {
  require(!axis.empty(), ErrorCode::kInvalidArgument, "synthetic spec needs a wavelength axis");
  require(height >= 4 && width >= 4, ErrorCode::kInvalidArgument, "synthetic cube must be at least 4 x 4");
  require(t >= 0.0 && t <= 1.0, ErrorCode::kInvalidArgument, "ripeness t must lie in [0, 1]");
  require(noise_sigma >= 0.0, ErrorCode::kInvalidArgument, "noise sigma must be non-negative");
  require(brightness > 0.0, ErrorCode::kInvalidArgument, "brightness must be positive");
  require(radius_y * height >= 1.0 && radius_x * width >= 1.0, ErrorCode::kInvalidArgument,
          "degenerate ellipse: radii must cover at least one pixel");
  require(center_y > 0.0 && center_y < 1.0 && center_x > 0.0 && center_x < 1.0, ErrorCode::kInvalidArgument,
          "ellipse centre must lie inside the image");
  const double lo = axis.front(), hi = axis.back();
  if (signal == SynthSignal::kBand900) {
    require(band_center_nm >= lo && band_center_nm <= hi, ErrorCode::kInvalidArgument,
            "signal band " + std::to_string(band_center_nm) + " nm outside the axis");
  } else {
    require(dip_center_nm >= lo && dip_center_nm <= hi && nir_pivot_nm >= lo && nir_pivot_nm <= hi,
            ErrorCode::kInvalidArgument, "signal bands outside the axis");
  }
}

namespace {

double raised_cosine(double d, double half_width) {
  if (std::abs(d) >= half_width) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * d / half_width));
}

double smoothstep(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  return u * u * (3.0 - 2.0 * u);
}

// Smooth fruit-like base: low visible reflectance rising to an NIR plateau, dipping again past
// the water band. Positive everywhere.
double base_reflectance(double nm) {
  const double rise = 1.0 / (1.0 + std::exp(-(nm - 715.0) / 22.0));
  const double green = 0.04 * std::exp(-0.5 * std::pow((nm - 550.0) / 35.0, 2));
  const double water = 0.10 * std::exp(-0.5 * std::pow((nm - 1450.0) / 60.0, 2));
  return 0.08 + green + 0.42 * rise - water;
}

}  // namespace

std::vector<double> synth_spectrum(const SynthSpec& s, double t) {
  std::vector<double> out(s.axis.size());
  for (std::size_t b = 0; b < out.size(); ++b) {
    const double nm = s.axis[b];
    double v = base_reflectance(nm);
    if (s.signal == SynthSignal::kRipening) {
      v -= s.dip_depth * (1.0 - t) * raised_cosine(nm - s.dip_center_nm, s.dip_half_width_nm);
      v += s.nir_shift * (t - 0.5) * smoothstep((nm - s.nir_pivot_nm) / s.nir_ramp_nm);
    } else {
      v += s.band_amplitude * t * raised_cosine(nm - s.band_center_nm, s.band_half_width_nm);
    }
    out[b] = v;
  }
  return out;
}

std::vector<bool> synth_signal_bands(const SynthSpec& s) {
  std::vector<bool> out(s.axis.size(), false);
  for (std::size_t b = 0; b < out.size(); ++b) {
    const double nm = s.axis[b];
    if (s.signal == SynthSignal::kRipening)
      out[b] = std::abs(nm - s.dip_center_nm) < s.dip_half_width_nm || nm > s.nir_pivot_nm;
    else
      out[b] = std::abs(nm - s.band_center_nm) < s.band_half_width_nm;
  }
  return out;
}

double synth_firmness(Fruit fruit, double t) {
  const double hard = fruit == Fruit::kAvocado ? 1200.0 : 1500.0;
  const double soft = fruit == Fruit::kAvocado ? 900.0 : 1000.0;
  const double span = hard - soft;
  return hard + span - 3.0 * span * t;
}

double synth_brix(double t) { return 14.0 + 4.5 * t; }

int synth_class(double t) {
  if (3.0 * t < 1.0) return 0;
  if (3.0 * t > 2.0) return 2;
  return 1;
}

SynthSample generate_cube(const SynthSpec& spec) {
  spec.validate();
  const auto spectrum = synth_spectrum(spec, spec.t);
  const int h = spec.height, w = spec.width, b = static_cast<int>(spec.axis.size());
  SynthSample out;
  out.cube = HyperCube(h, w, spec.axis);
  out.mask = BinaryMask(h, w);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double cy = spec.center_y * h, cx = spec.center_x * w;
  const double ry = spec.radius_y * h, rx = spec.radius_x * w;
  const double ca = std::cos(spec.angle), sa = std::sin(spec.angle);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
      const double u = (ca * dx + sa * dy) / rx, v = (-sa * dx + ca * dy) / ry;
      const double r2 = u * u + v * v;
      if (r2 > 1.0) continue;
      out.mask.at(y, x) = 1;
      const double shade = spec.brightness * (1.0 - 0.25 * r2);
      auto px = out.cube.pixel(y, x);
      for (int k = 0; k < b; ++k) {
        double val = spectrum[k] * shade;
        if (spec.noise_sigma > 0.0) val += spec.noise_sigma * noise(rng);
        px[k] = static_cast<float>(std::max(val, 1e-4));
      }
    }

  LabelRecord& r = out.record;
  char id[32];
  std::snprintf(id, sizeof id, "synth_%016llx", static_cast<unsigned long long>(spec.seed));
  r.recording_id = id;
  r.fruit = spec.fruit;
  r.camera = spec.camera;
  r.day = static_cast<int>(std::lround(spec.t * 10.0));
  r.firmness_g_cm2 = synth_firmness(spec.fruit, spec.t);
  if (spec.fruit == Fruit::kKiwi) r.sugar_brix = synth_brix(spec.t);
  r.ripeness_state = synth_class(spec.t);
  r.path = r.recording_id + ".hdr";
  return out;
}

SynthDataset generate_dataset(const SynthDatasetOptions& o) {
  require(o.n >= 3, ErrorCode::kInvalidArgument, "synthetic dataset needs n >= 3");
  require(o.size >= 8, ErrorCode::kInvalidArgument, "synthetic cubes must be at least 8 pixels wide");
  require(o.t_margin >= 0.0 && o.t_margin < 1.0 / 6.0, ErrorCode::kInvalidArgument, "t margin must lie in [0, 1/6)");
  double sum = 0.0;
  for (double f : o.balance) {
    require(f >= 0.0, ErrorCode::kInvalidArgument, "class balance fractions must be non-negative");
    sum += f;
  }
  require(std::abs(sum - 1.0) <= 1e-9, ErrorCode::kInvalidArgument, "class balance fractions must sum to 1");
  const auto counts = apportion(o.n, SplitRatios{o.balance[0], o.balance[1], o.balance[2]});
  for (int c = 0; c < 3; ++c)
    require(o.balance[c] == 0.0 || counts[c] > 0, ErrorCode::kInvalidArgument,
            "balance unreachable with n = " + std::to_string(o.n) + ": class " + std::to_string(c) + " gets no records");

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double third = 1.0 / 3.0, m = o.t_margin;
  const double lo[3] = {0.0, third + m, 2 * third + m}, hi[3] = {third - m, 2 * third - m, 1.0};

  std::vector<int> classes;
  for (int c = 0; c < 3; ++c) classes.insert(classes.end(), counts[c], c);
  std::shuffle(classes.begin(), classes.end(), rng);

  SynthDataset d;
  d.samples.reserve(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const int c = classes[i];
    SynthSpec s;
    s.axis = o.camera.axis();
    s.camera = o.camera.name;
    s.fruit = o.fruit;
    s.height = s.width = o.size;
    s.signal = o.signal;
    s.noise_sigma = o.noise_sigma;
    s.band_amplitude = o.band_amplitude;
    s.t = lo[c] + (hi[c] - lo[c]) * u(rng);
    s.center_y = 0.5 + 0.06 * (u(rng) - 0.5);
    s.center_x = 0.5 + 0.06 * (u(rng) - 0.5);
    s.radius_y = 0.36 * (0.88 + 0.12 * u(rng));
    s.radius_x = 0.30 * (0.88 + 0.12 * u(rng));
    s.angle = std::numbers::pi * u(rng);
    s.brightness = 0.9 + 0.2 * u(rng);
    s.seed = rng();
    auto sample = generate_cube(s);
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", i);
    sample.record.recording_id = id;
    sample.record.fruit_id = id;
    sample.record.path = std::string(id) + ".hdr";
    d.classes.push_back(c);
    d.t.push_back(s.t);
    d.samples.push_back(std::move(sample));
  }
  return d;
}

std::vector<LabelRecord> write_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<LabelRecord> records;
  for (const auto& s : data.samples) {
    save_cube(s.cube, dir / s.record.recording_id);
    HyperCube m(s.mask.height, s.mask.width, WavelengthAxis(std::vector<double>{0.0}));
    for (std::size_t i = 0; i < s.mask.data.size(); ++i) m.data()[i] = s.mask.data[i];
    save_cube(m, dir / (s.record.recording_id + "_mask"));
    records.push_back(s.record);
  }
  save_manifest(records, dir / "manifest.csv");
  return records;
}

RawScene render_raw_scene(const SynthSample& sample, const RawSceneOptions& o) {
  require(o.margin >= 0, ErrorCode::kInvalidArgument, "margin must be non-negative");
  require(o.white_counts > o.dark_counts, ErrorCode::kInvalidArgument, "white level must exceed the dark level");
  const auto& c = sample.cube;
  const int h = c.height() + 2 * o.margin, w = c.width() + 2 * o.margin, b = c.bands();
  RawScene s;
  s.raw = RawFrame(h, w, c.axis());
  s.white = RawFrame(h, w, c.axis());
  s.dark = RawFrame(h, w, c.axis());
  s.fruit_mask = BinaryMask(h, w);
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> n(0.0, o.count_noise);
  auto counts = [&](double v) { return static_cast<float>(std::clamp(std::round(v + n(rng)), 0.0, 65535.0)); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int cy = y - o.margin, cx = x - o.margin;
      const bool inside = cy >= 0 && cy < c.height() && cx >= 0 && cx < c.width();
      const bool fruit = inside && sample.mask.at(cy, cx);
      if (fruit) s.fruit_mask.at(y, x) = 1;
      for (int k = 0; k < b; ++k) {
        // sensor gain varies smoothly with wavelength, like a real white reference
        const double gain = (o.white_counts - o.dark_counts) * (0.7 + 0.3 * std::sin(0.01 * k + 0.5));
        const double refl = fruit ? c.at(cy, cx, k) : o.background_reflectance;
        s.dark.at(y, x, k) = counts(o.dark_counts);
        s.white.at(y, x, k) = counts(o.dark_counts + gain);
        s.raw.at(y, x, k) = counts(o.dark_counts + gain * refl);
      }
    }
  return s;
}

}  // namespace hsf
