#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "hsfruit/envi_io.hpp"
#include "hsfruit/synth.hpp"

using namespace hsf;

TEST_CASE("noise-free cubes are deterministic") {
  SynthSpec s;
  s.noise_sigma = 0.0;
  s.seed = 5;
  s.t = 0.4;
  const auto a = generate_cube(s), b = generate_cube(s);
  CHECK(std::equal(a.cube.data().begin(), a.cube.data().end(), b.cube.data().begin()));
  s.noise_sigma = 0.02;
  const auto c = generate_cube(s), d = generate_cube(s);
  CHECK(std::equal(c.cube.data().begin(), c.cube.data().end(), d.cube.data().begin()));
}

TEST_CASE("t = 0 and t = 1 differ only at the signal bands") {
  for (auto sig : {SynthSignal::kRipening, SynthSignal::kBand900}) {
    SynthSpec s;
    s.signal = sig;
    s.noise_sigma = 0.0;
    s.t = 0.0;
    const auto a = generate_cube(s);
    s.t = 1.0;
    const auto b = generate_cube(s);
    const auto sigb = synth_signal_bands(s);
    int differing = 0;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        for (int k = 0; k < a.cube.bands(); ++k) {
          const double d = std::abs(static_cast<double>(a.cube.at(y, x, k)) - b.cube.at(y, x, k));
          if (!sigb[k]) CHECK(d < 1e-9);
          else differing += d > 1e-6;
        }
    CHECK(differing > 0);
  }
  SynthSpec s;
  s.signal = SynthSignal::kBand900;
  const auto bands = synth_signal_bands(s);
  for (std::size_t k = 0; k < bands.size(); ++k)
    if (bands[k]) CHECK(std::abs(s.axis[k] - 900.0) < 30.0);
}

TEST_CASE("mask is exact ground truth and background is zero") {
  SynthSpec s;
  s.noise_sigma = 0.0;
  s.angle = 0.7;
  const auto g = generate_cube(s);
  const int band = s.axis.nearest_band(750.0);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      CHECK((g.cube.at(y, x, band) > 0.0f) == (g.mask.at(y, x) == 1));
      if (!g.mask.at(y, x))
        for (float v : g.cube.pixel(y, x)) CHECK(v == 0.0f);
    }
  const auto cropped = crop_to_fruit(g.cube, g.mask);
  std::size_t fg = 0;
  for (int y = 0; y < cropped.height(); ++y)
    for (int x = 0; x < cropped.width(); ++x) fg += is_foreground(cropped.pixel(y, x));
  CHECK(fg == g.mask.count());
}

TEST_CASE("label mapping hits the thresholds") {
  CHECK(synth_firmness(Fruit::kAvocado, 1.0 / 3.0) == doctest::Approx(1200.0));
  CHECK(synth_firmness(Fruit::kAvocado, 2.0 / 3.0) == doctest::Approx(900.0));
  CHECK(synth_firmness(Fruit::kKiwi, 1.0 / 3.0) == doctest::Approx(1500.0));
  CHECK(synth_brix(1.0 / 3.0) == doctest::Approx(15.5));
  CHECK(synth_brix(2.0 / 3.0) == doctest::Approx(17.0));
  for (double t = 0.0; t <= 1.0; t += 0.01) {
    if (std::abs(3 * t - 1) < 1e-6 || std::abs(3 * t - 2) < 1e-6) continue;
    CHECK(assign_firmness_class(Fruit::kAvocado, synth_firmness(Fruit::kAvocado, t)).class_index == synth_class(t));
    CHECK(assign_firmness_class(Fruit::kKiwi, synth_firmness(Fruit::kKiwi, t)).class_index == synth_class(t));
    CHECK(assign_sweetness_class(Fruit::kKiwi, synth_brix(t)).class_index == synth_class(t));
  }
}

TEST_CASE("dataset class counts, determinism and label round trip") {
  SynthDatasetOptions o;
  o.n = 30;
  o.size = 16;
  o.seed = 3;
  o.fruit = Fruit::kKiwi;
  const auto d = generate_dataset(o);
  int counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    ++counts[d.classes[i]];
    const auto& r = d.samples[i].record;
    CHECK(label_for(r, Category::kFirmness)->class_index == d.classes[i]);
    CHECK(label_for(r, Category::kSweetness)->class_index == d.classes[i]);
    CHECK(label_for(r, Category::kRipeness)->class_index == d.classes[i]);
  }
  CHECK(counts[0] == 10);
  CHECK(counts[1] == 10);
  CHECK(counts[2] == 10);

  std::vector<LabelRecord> r1, r2;
  for (const auto& s : d.samples) r1.push_back(s.record);
  for (const auto& s : generate_dataset(o).samples) r2.push_back(s.record);
  CHECK(manifest_csv(r1) == manifest_csv(r2));

  SynthDatasetOptions bad = o;
  bad.n = 3;
  bad.balance = {0.9, 0.05, 0.05};
  CHECK_THROWS_AS(generate_dataset(bad), Error);
  bad.n = 2;
  bad.balance = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK_THROWS_AS(generate_dataset(bad), Error);
}

TEST_CASE("degenerate ellipse and out-of-axis signal are rejected") {
  SynthSpec s;
  s.radius_x = 0.001;
  CHECK_THROWS_AS(generate_cube(s), Error);
  SynthSpec r;
  r.axis = CameraProfile::redeye_17().axis();
  r.signal = SynthSignal::kBand900;
  CHECK_THROWS_AS(generate_cube(r), Error);
}

TEST_CASE("written dataset loads back through the manifest") {
  SynthDatasetOptions o;
  o.n = 4;
  o.size = 12;
  o.balance = {0.5, 0.25, 0.25};
  const auto d = generate_dataset(o);
  const auto dir = std::filesystem::temp_directory_path() / "hsf_synth_write";
  std::filesystem::remove_all(dir);
  write_dataset(d, dir);
  const auto recs = load_manifest(dir / "manifest.csv");
  REQUIRE(recs.size() == 4);
  const auto cube = load_hypercube(dir / recs[0].path);
  CHECK(std::equal(cube.data().begin(), cube.data().end(), d.samples[0].cube.data().begin()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("raw scene calibrates back to the synthetic reflectance") {
  SynthSpec s;
  s.height = s.width = 12;
  s.axis = WavelengthAxis::linspace(400, 1000, 20);
  const auto g = generate_cube(s);
  RawSceneOptions o;
  o.count_noise = 0.0;
  o.margin = 3;
  const auto scene = render_raw_scene(g, o);
  const auto cal = calibrate(scene.raw, scene.white, scene.dark);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x)
      for (int k = 0; k < 20; ++k) {
        const float want = g.mask.at(y, x) ? g.cube.at(y, x, k) : 0.06f;
        CHECK(std::abs(cal.at(y + 3, x + 3, k) - want) < 1e-3);
      }
}
