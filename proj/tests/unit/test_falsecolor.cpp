#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "hsfruit/falsecolor.hpp"
#include "hsfruit/synth.hpp"

using namespace hsf;

namespace {

// Spectra c0*u0 + c1*u1 + c2*u2 + offset + N(0, sigma^2) with smooth basis curves.
SpectraMatrix rank3(int n, int bands, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::normal_distribution<double> nz(0, sigma);
  SpectraMatrix m;
  m.bands = bands;
  for (int i = 0; i < n; ++i) {
    const double c0 = u(rng), c1 = u(rng), c2 = u(rng);
    for (int k = 0; k < bands; ++k) {
      const double t = k / double(bands - 1);
      m.data.push_back(static_cast<float>(0.4 + c0 * 0.1 * std::sin(3.1 * t) + c1 * 0.1 * std::cos(5.3 * t) +
                                          c2 * 0.1 * (t * t - 0.3) + nz(rng)));
    }
  }
  return m;
}

HyperCube cube_from(const SpectraMatrix& m, int h, int w, const WavelengthAxis& axis) {
  HyperCube c(h, w, axis);
  std::copy_n(m.data.begin(), static_cast<std::size_t>(h) * w * m.bands, c.data().begin());
  return c;
}

struct Split {
  CubeSet train, val;
};

// Three classes whose only difference is the amplitude of a single spectral bump (rank one).
Split rank1_task(int n_train, int n_val, std::uint64_t seed) {
  SynthDatasetOptions o;
  o.n = n_train + n_val;
  o.size = 16;
  o.camera = {"test", 24, 400.0, 1000.0};
  o.signal = SynthSignal::kBand900;
  o.band_amplitude = 0.3;
  o.seed = seed;
  auto d = generate_dataset(o);
  Split s;
  for (int i = 0; i < o.n; ++i) (i < n_train ? s.train : s.val).add(std::move(d.samples[i].cube), d.classes[i]);
  return s;
}

EncoderBundle pretrained(const CubeSet& cubes, std::uint64_t seed) {
  const auto px = collect_fruit_pixels(cubes.cubes, 1u << 30, 0);
  AutoencoderConfig ac;
  ac.min_spectra = 1000;
  ac.epochs = 15;
  ac.seed = seed;
  return train_autoencoder(px, cubes.cubes.front().axis(), ac);
}

LatentClassifierConfig small_cfg(std::uint64_t seed) {
  LatentClassifierConfig c;
  c.train.max_epochs = 20;
  c.train.early_stop_patience = 20;
  c.train.batch_size = 8;
  c.train.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("autoencoder recovers a rank-3 subspace down to the noise floor") {
  const double sigma = 0.01;
  const auto m = rank3(12000, 64, sigma, 1);
  const auto e = train_autoencoder(m, WavelengthAxis::linspace(400, 1000, 64));
  CHECK(e.stage == BundleStage::kReconstructionOnly);
  CHECK(e.heldout_mse <= 2.0 * sigma * sigma);
  CHECK(e.encode(Tensor({5, 64})).dim(1) == kLatentDim);
}

TEST_CASE("training reconstruction error is below held-out error on average") {
  double tr = 0, ho = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    // five hidden factors and strong noise through three latents: the fit partly memorises the
    // training half, and a large held-out half keeps the estimate's own spread small
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0, 1);
    SpectraMatrix m;
    m.bands = 100;
    for (int i = 0; i < 10000; ++i) {
      double c[5];
      for (double& v : c) v = g(rng);
      for (int k = 0; k < 100; ++k) {
        double s = 0.5;
        for (int f = 0; f < 5; ++f) s += 0.05 * c[f] * std::sin((f + 1) * 0.37 * k + f);
        m.data.push_back(static_cast<float>(s + 0.05 * g(rng)));
      }
    }
    AutoencoderConfig ac;
    ac.epochs = 30;
    ac.holdout_fraction = 0.5;
    ac.seed = seed;
    const auto e = train_autoencoder(m, WavelengthAxis::linspace(400, 1000, 100), ac);
    tr += e.train_mse;
    ho += e.heldout_mse;
  }
  CHECK(tr <= ho);
}

TEST_CASE("constant spectra reconstruct exactly") {
  SpectraMatrix m;
  m.bands = 20;
  for (int i = 0; i < 10000; ++i)
    for (int k = 0; k < 20; ++k) m.data.push_back(0.3f + 0.01f * k);
  AutoencoderConfig ac;
  ac.epochs = 10;
  const auto e = train_autoencoder(m, WavelengthAxis::linspace(400, 1000, 20), ac);
  CHECK(e.heldout_mse < 1e-8);
  CHECK(e.train_mse < 1e-8);
}

TEST_CASE("too few spectra or mismatched axis") {
  const auto m = rank3(9999, 10, 0.01, 1);
  CHECK_THROWS_AS(train_autoencoder(m, WavelengthAxis::linspace(400, 1000, 10)), Error);
  const auto ok = rank3(10000, 10, 0.01, 1);
  CHECK_THROWS_AS(train_autoencoder(ok, WavelengthAxis::linspace(400, 1000, 11)), Error);
}

TEST_CASE("latent normalisation maps the fitted spectra into the unit cube") {
  auto e = build_encoder_bundle(WavelengthAxis::linspace(400, 1000, 10), 4);
  const auto m = rank3(500, 10, 0.01, 2);
  e.fit_latent_norm(m);
  const auto z = e.encode(Tensor({500, 10}, m.data));
  for (int d = 0; d < kLatentDim; ++d) {
    double lo = 1, hi = 0;
    for (int i = 0; i < 500; ++i) {
      const double v = e.normalize(d, z[i * kLatentDim + d]);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      lo = std::min(lo, v), hi = std::max(hi, v);
    }
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
  }
}

TEST_CASE("rendering: background, determinism, per-pixel purity, errors") {
  const auto axis = WavelengthAxis::linspace(400, 1000, 10);
  auto e = build_encoder_bundle(axis, 5);
  const auto m = rank3(64, 10, 0.01, 3);
  e.fit_latent_norm(m);

  std::string warn;
  const auto black = render_false_color(e, HyperCube(4, 5, axis), &warn);
  for (float v : black.data) CHECK(v == 0.0f);
  CHECK(!warn.empty());

  auto cube = cube_from(m, 8, 8, axis);
  for (int k = 0; k < 10; ++k) cube.at(2, 3, k) = 0.0f;
  const auto a = render_false_color(e, cube), b = render_false_color(e, cube);
  CHECK(a.data == b.data);
  for (int c = 0; c < 3; ++c) CHECK(a.at(2, 3, c) == 0.0f);
  for (float v : a.data) CHECK((v >= 0.0f && v <= 1.0f));

  // mirror the columns: the image mirrors the same way
  HyperCube flipped = cube;
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int k = 0; k < 10; ++k) flipped.at(y, x, k) = cube.at(y, 7 - x, k);
  const auto f = render_false_color(e, flipped);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) CHECK(f.at(y, x, c) == a.at(y, 7 - x, c));

  CHECK_THROWS_AS(render_false_color(e, HyperCube(2, 2, WavelengthAxis::linspace(400, 1000, 11))), Error);
}

TEST_CASE("latent classifier input gradient matches finite differences") {
  const auto axis = WavelengthAxis::linspace(400, 1000, 6);
  auto e = build_encoder_bundle(axis, 7);
  e.fit_latent_norm(rank3(100, 6, 0.05, 4));
  auto m = build_latent_classifier(e, LatentClassifierConfig::default_classifier());
  CHECK(m.config().in_bands == 6);
  auto cube = cube_from(rank3(64, 6, 0.05, 5), 8, 8, axis);
  for (int k = 0; k < 6; ++k) cube.at(0, 0, k) = 0.0f;
  Tensor x = to_batch(cube);
  (void)m.forward(x, false);
  Tensor g({1, 3});
  g[1] = 1.0f;
  const Tensor dx = m.backward(g, true);
  for (int k = 0; k < 6; ++k) CHECK(dx[static_cast<std::size_t>(k) * 64] == 0.0f);  // background pixel
  const double h = 1e-3;
  for (std::size_t e_idx : {9u, 70u, 200u, 383u}) {
    Tensor xp = x, xm = x;
    xp[e_idx] += static_cast<float>(h);
    xm[e_idx] -= static_cast<float>(h);
    const double num = (m.infer(xp)[1] - m.infer(xm)[1]) / (2 * h);
    CHECK(std::abs(num - dx[e_idx]) <= 2e-3 * std::max(1.0, std::abs(num)));
  }
}

TEST_CASE("latent classifier learns a rank-one class signal; stage machine") {
  auto s = rank1_task(60, 30, 11);
  auto bundle = pretrained(s.train, 1);
  const auto r = train_latent_classifier(bundle, s.train, s.val, small_cfg(1));
  CHECK(r.val_accuracy >= 0.9);
  CHECK(bundle.stage == BundleStage::kClassificationTuned);
  CHECK(bundle.category == "ripeness");
  CHECK_THROWS_AS(train_latent_classifier(bundle, s.train, s.val, small_cfg(1)), Error);

  // retuned normalisation covers the training fruit pixels exactly
  const auto px = collect_fruit_pixels(s.train.cubes, 1u << 30, 0);
  const auto z = bundle.encode(Tensor({static_cast<int>(px.rows()), px.bands}, px.data));
  for (int d = 0; d < kLatentDim; ++d) {
    double lo = 1, hi = 0;
    for (std::size_t i = 0; i < px.rows(); ++i) {
      const double v = bundle.normalize(d, z[i * kLatentDim + d]);
      lo = std::min(lo, v), hi = std::max(hi, v);
    }
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
  }

  std::string warn = "x";
  (void)render_false_color(bundle, s.val.cubes[0], &warn);
  CHECK(warn.empty());

  const auto path = std::filesystem::temp_directory_path() / "hsf_bundle.bin";
  save_bundle(bundle, path, &r.model);
  std::optional<ClassifierModel> clf;
  const auto back = load_bundle(path, &clf);
  REQUIRE(clf.has_value());
  CHECK(back.stage == BundleStage::kClassificationTuned);
  CHECK(render_false_color(back, s.val.cubes[1]).data == render_false_color(bundle, s.val.cubes[1]).data);
  const auto p1 = predict_probabilities(*clf, s.val), p2 = predict_probabilities(r.model, s.val);
  CHECK(p1 == p2);
  std::filesystem::remove(path);
}

TEST_CASE("missing labels are rejected") {
  auto s = rank1_task(12, 6, 2);
  auto bundle = build_encoder_bundle(s.train.cubes[0].axis(), 0);
  CHECK_THROWS_AS(train_latent_classifier(bundle, CubeSet{}, s.val), Error);
  CubeSet two;
  for (std::size_t i = 0; i < s.train.size(); ++i)
    if (s.train.labels[i] != 2) two.add(s.train.cubes[i], s.train.labels[i]);
  CHECK_THROWS_AS(train_latent_classifier(bundle, two, s.val), Error);
  CHECK(bundle.stage == BundleStage::kReconstructionOnly);
}

TEST_CASE("a frozen encoder does not beat joint fine-tuning (paired seeds)") {
  auto s = rank1_task(45, 30, 21);
  double frozen = 0, joint = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto base = pretrained(s.train, seed);
    auto b1 = base, b2 = base;
    auto cf = small_cfg(seed);
    cf.freeze_encoder = true;
    frozen += train_latent_classifier(b1, s.train, s.val, cf).val_accuracy;
    joint += train_latent_classifier(b2, s.train, s.val, small_cfg(seed)).val_accuracy;
    // the frozen run leaves the encoder untouched
    CHECK(b1.encode(Tensor({1, 24}, std::vector<float>(24, 0.3f))).vec() ==
          base.encode(Tensor({1, 24}, std::vector<float>(24, 0.3f))).vec());
  }
  CHECK(frozen / 3 <= joint / 3);
}
