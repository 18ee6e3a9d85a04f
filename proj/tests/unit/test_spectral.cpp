#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "hsfruit/envi_io.hpp"
#include "hsfruit/spectral.hpp"

using namespace hsf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("hsf_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RawFrame filled(int h, int w, int b, float v) {
  return RawFrame(h, w, WavelengthAxis::linspace(400, 1000, b),
                  std::vector<float>(static_cast<std::size_t>(h) * w * b, v));
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode{};
}

}  // namespace

TEST_CASE("wavelength axis validation") {
  CHECK_THROWS_AS(WavelengthAxis(std::vector<double>{}), Error);
  CHECK_THROWS_AS(WavelengthAxis({500, 500}), Error);
  CHECK_THROWS_AS(WavelengthAxis({500, 400}), Error);
  CHECK_THROWS_AS(WavelengthAxis({500, std::nan("")}), Error);
  const auto fx10 = CameraProfile::specim_fx10().axis();
  CHECK(fx10.size() == 224);
  CHECK(fx10.front() == doctest::Approx(400));
  CHECK(fx10.back() == doctest::Approx(1000));
  const auto red = CameraProfile::redeye_17().axis();
  CHECK(red.size() == 252);
  CHECK(red.nearest_band(950.1) == 0);
  CHECK(CameraProfile::by_name("redeye_17").band_count == 252);
  CHECK_THROWS_AS(CameraProfile::by_name("nope"), Error);
}

TEST_CASE("average_references") {
  std::vector<RawFrame> same(10, filled(2, 3, 4, 100.0f));
  const RawFrame m1 = average_references(same);
  for (float v : m1.data()) CHECK(v == 100.0f);

  std::vector<RawFrame> two{filled(2, 2, 3, 0.0f), filled(2, 2, 3, 200.0f)};
  const RawFrame m2 = average_references(two);
  for (float v : m2.data()) CHECK(v == 100.0f);

  // i.i.d. frames against a scalar loop; permutation invariant
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> d(0, 4000);
  std::vector<RawFrame> frames;
  for (int f = 0; f < 10; ++f) {
    RawFrame fr = filled(3, 4, 5, 0.0f);
    for (float& v : fr.data()) v = static_cast<float>(d(rng));
    frames.push_back(fr);
  }
  const RawFrame mean = average_references(frames);
  for (std::size_t i = 0; i < mean.data().size(); ++i) {
    double s = 0.0;
    for (const auto& fr : frames) s += fr.data()[i];
    CHECK(mean.data()[i] == static_cast<float>(s / 10.0));
  }
  std::vector<RawFrame> shuffled(frames.rbegin(), frames.rend());
  const RawFrame mean2 = average_references(shuffled);
  CHECK(std::equal(mean.data().begin(), mean.data().end(), mean2.data().begin()));

  frames[6] = filled(3, 4, 6, 1.0f);
  try {
    average_references(frames);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
    CHECK(std::string(e.what()).find("6") != std::string::npos);
  }
  CHECK_THROWS_AS(average_references(std::vector<RawFrame>{}), Error);
}

TEST_CASE("calibration anchors, midpoint and degenerate bands") {
  RawFrame dark = filled(3, 3, 4, 100.0f), white = filled(3, 3, 4, 3000.0f);
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < dark.data().size(); ++i) {
    dark.data()[i] = static_cast<float>(50 + rng() % 100);
    white.data()[i] = static_cast<float>(2000 + rng() % 2000);
  }
  const HyperCube lo = calibrate(dark, white, dark), hi = calibrate(white, white, dark);
  for (float v : lo.data()) CHECK(v == 0.0f);
  for (float v : hi.data()) CHECK(v == 1.0f);
  RawFrame mid = dark;
  for (std::size_t i = 0; i < mid.data().size(); ++i)
    mid.data()[i] = dark.data()[i] + 0.5f * (white.data()[i] - dark.data()[i]);
  const HyperCube half = calibrate(mid, white, dark);
  for (float v : half.data()) CHECK(v == 0.5f);

  // dead band at pixel (1,2), band 3
  RawFrame w2 = white;
  w2.at(1, 2, 3) = dark.at(1, 2, 3);
  const HyperCube c = calibrate(mid, w2, dark);
  CHECK(c.at(1, 2, 3) == 0.0f);
  REQUIRE(c.mask.has_value());
  CHECK((*c.mask)[1 * 3 + 2] == 0);
  CHECK((*c.mask)[0] == 1);

  CHECK(code_of([&] { calibrate(filled(3, 3, 5, 1), white, dark); }) == ErrorCode::kShapeMismatch);
}

TEST_CASE("calibration is affine in the raw frame") {
  // Dyadic inputs keep every intermediate exact, so the identity holds to 1e-9.
  RawFrame dark = filled(2, 4, 3, 0.0f), white = filled(2, 4, 3, 0.0f), r1 = dark, r2 = dark;
  std::mt19937_64 rng(11);
  for (std::size_t i = 0; i < dark.data().size(); ++i) {
    dark.data()[i] = static_cast<float>(rng() % 64);
    white.data()[i] = dark.data()[i] + static_cast<float>(1u << (rng() % 10));
    r1.data()[i] = static_cast<float>(rng() % 2048);
    r2.data()[i] = static_cast<float>(rng() % 2048);
  }
  const HyperCube c1 = calibrate(r1, white, dark), c2 = calibrate(r2, white, dark);
  for (double a : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    RawFrame mix = r1;
    for (std::size_t i = 0; i < mix.data().size(); ++i)
      mix.data()[i] = static_cast<float>(a * r1.data()[i] + (1 - a) * r2.data()[i]);
    const HyperCube cm = calibrate(mix, white, dark);
    for (std::size_t i = 0; i < mix.data().size(); ++i)
      CHECK(std::abs(cm.data()[i] - (a * c1.data()[i] + (1 - a) * c2.data()[i])) <= 1e-9);
  }
  // arbitrary counts: float32 storage limits agreement to a few ulps
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < dark.data().size(); ++i) {
    white.data()[i] = dark.data()[i] + 100.0f + static_cast<float>(3000 * u(rng));
    r1.data()[i] = static_cast<float>(4000 * u(rng));
    r2.data()[i] = static_cast<float>(4000 * u(rng));
  }
  const HyperCube d1 = calibrate(r1, white, dark), d2 = calibrate(r2, white, dark);
  const double a = 0.3;
  RawFrame mix = r1;
  for (std::size_t i = 0; i < mix.data().size(); ++i)
    mix.data()[i] = static_cast<float>(a * r1.data()[i] + (1 - a) * r2.data()[i]);
  const HyperCube dm = calibrate(mix, white, dark);
  for (std::size_t i = 0; i < mix.data().size(); ++i)
    CHECK(std::abs(dm.data()[i] - (a * d1.data()[i] + (1 - a) * d2.data()[i])) <= 1e-5);
}

TEST_CASE("spectrum_at") {
  HyperCube c(3, 4, WavelengthAxis::linspace(400, 500, 6));
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x)
      for (int b = 0; b < 6; ++b) c.at(y, x, b) = static_cast<float>(b);
  const auto s = spectrum_at(c, 2, 1);
  for (int b = 0; b < 6; ++b) CHECK(s[b] == b);

  std::mt19937_64 rng(4);
  std::normal_distribution<float> d;
  for (float& v : c.data()) v = d(rng);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) {
      const auto p = spectrum_at(c, x, y);
      for (int b = 0; b < 6; ++b) CHECK(p[b] == c.data()[(static_cast<std::size_t>(y) * 4 + x) * 6 + b]);
    }
  CHECK(code_of([&] { spectrum_at(c, 4, 0); }) == ErrorCode::kOutOfRange);
  CHECK(code_of([&] { spectrum_at(c, 0, -1); }) == ErrorCode::kOutOfRange);
}

TEST_CASE("ENVI round trip and error kinds") {
  const fs::path dir = scratch("envi");
  HyperCube c(4, 4, WavelengthAxis({401.25, 450.5, 500.125, 733.3, 999.99}));
  std::mt19937_64 rng(9);
  std::normal_distribution<float> d(0.5f, 0.3f);
  for (float& v : c.data()) v = d(rng);
  for (Interleave il : {Interleave::kBsq, Interleave::kBil, Interleave::kBip}) {
    save_cube(c, dir / "cube", il);
    const HyperCube back = load_hypercube(dir / "cube.hdr");
    REQUIRE(back.same_shape(c));
    CHECK(std::memcmp(back.data().data(), c.data().data(), c.data().size() * sizeof(float)) == 0);
    for (std::size_t b = 0; b < 5; ++b) CHECK(std::abs(back.axis()[b] - c.axis()[b]) <= 1e-6);
  }

  RawFrame raw = filled(2, 3, 4, 0.0f);
  for (float& v : raw.data()) v = static_cast<float>(rng() % 60000);
  save_raw_frame(raw, dir / "raw");
  const auto loaded = load_cube(dir / "raw.bin");
  REQUIRE(std::holds_alternative<RawFrame>(loaded));
  CHECK(std::equal(raw.data().begin(), raw.data().end(), std::get<RawFrame>(loaded).data().begin()));

  auto write_text = [](const fs::path& p, const std::string& s) { std::ofstream(p) << s; };
  const std::string good = "ENVI\nsamples = 4\nlines = 4\nbands = 5\nheader offset = 0\nfile type = ENVI Standard\n"
                           "data type = 4\ninterleave = bsq\nbyte order = 0\n"
                           "wavelength = {401.25, 450.5, 500.125, 733.3, 999.99}\n";
  save_cube(c, dir / "cube");
  std::string t = good;
  t.replace(t.find("wavelength = {401.25, "), 22, "wavelength = {");
  write_text(dir / "cube.hdr", t);
  CHECK(code_of([&] { load_cube(dir / "cube.hdr"); }) == ErrorCode::kFormat);

  t = good;
  t.replace(t.find("samples = 4\n"), 12, "");
  write_text(dir / "cube.hdr", t);
  CHECK(code_of([&] { load_cube(dir / "cube.hdr"); }) == ErrorCode::kMissingHeaderKey);

  t = good;
  t.replace(t.find("bsq"), 3, "bxq");
  write_text(dir / "cube.hdr", t);
  CHECK(code_of([&] { load_cube(dir / "cube.hdr"); }) == ErrorCode::kUnknownInterleave);

  t = good;
  t.replace(t.find("lines = 4"), 9, "lines = 5");
  write_text(dir / "cube.hdr", t);
  CHECK(code_of([&] { load_cube(dir / "cube.hdr"); }) == ErrorCode::kPayloadSize);

  write_text(dir / "cube.hdr", good);
  CHECK(load_hypercube(dir / "cube.hdr").same_shape(c));
  CHECK(code_of([&] { load_cube(dir / "missing.hdr"); }) == ErrorCode::kIo);
  fs::remove_all(dir);
}

TEST_CASE("bil payload loads as the same cube as an equivalent bsq payload") {
  const fs::path dir = scratch("bil");
  const int h = 2, w = 2, b = 3;
  std::vector<float> v(h * w * b);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.5f + static_cast<float>(i) * 1.25f;
  auto val = [&](int y, int x, int k) { return v[(static_cast<std::size_t>(y) * w + x) * b + k]; };
  // hand-ordered payloads
  std::vector<float> bsq, bil;
  for (int k = 0; k < b; ++k)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) bsq.push_back(val(y, x, k));
  for (int y = 0; y < h; ++y)
    for (int k = 0; k < b; ++k)
      for (int x = 0; x < w; ++x) bil.push_back(val(y, x, k));
  auto emit = [&](const std::string& stem, const std::string& il, const std::vector<float>& payload) {
    std::ofstream(dir / (stem + ".hdr")) << "ENVI\nsamples = 2\nlines = 2\nbands = 3\ndata type = 4\ninterleave = "
                                         << il << "\nbyte order = 0\nwavelength = {500, 600, 700}\n";
    std::ofstream(dir / (stem + ".bin"), std::ios::binary)
        .write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 4));
  };
  emit("a", "bsq", bsq);
  emit("b", "bil", bil);
  const HyperCube ca = load_hypercube(dir / "a.hdr"), cb = load_hypercube(dir / "b.hdr");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < b; ++k) {
        CHECK(ca.at(y, x, k) == val(y, x, k));
        CHECK(cb.at(y, x, k) == val(y, x, k));
      }
  fs::remove_all(dir);
}
