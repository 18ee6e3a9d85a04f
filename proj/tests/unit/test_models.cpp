#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "hsfruit/models.hpp"

using namespace hsf;

namespace {

Tensor random_input(int n, int c, int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor x({n, c, side, side});
  for (auto& v : x.vec()) v = u(rng);
  return x;
}

std::size_t separable_block(std::size_t cin, std::size_t w, std::size_t k) { return cin * k * k + cin + cin * w + w; }
std::size_t normal_block(std::size_t cin, std::size_t w, std::size_t k) { return cin * w * k * k + w; }

}  // namespace

TEST_CASE("linear 10 -> 3 has 33 parameters") {
  nn::Rng rng(0);
  nn::Sequential s;
  s.emplace<nn::Linear>("fc", 10, 3, rng);
  CHECK(nn::parameter_count(s) == 33);
}

TEST_CASE("default HS-CNN lands in the 25k-40k budget and matches its closed form") {
  ModelConfig cfg;
  auto m = build_hscnn(cfg);
  const std::size_t n = count_parameters(m);
  MESSAGE("HS-CNN default parameter count: " << n);
  CHECK(n >= 25000);
  CHECK(n <= 40000);
  CHECK(cfg.resolved_widths() == std::vector<int>{32, 64, 128});
  // blocks (conv + 2 * width batch-norm scalars) plus the two-layer head
  std::size_t expect = separable_block(224, 32, 3) + 64 + separable_block(32, 64, 3) + 128 +
                       separable_block(64, 128, 3) + 256 + (128 * 64 + 64) + (64 * 3 + 3);
  CHECK(n == expect);
}

TEST_CASE("gap_only and gap_plus_linear differ by the hidden-layer closed form") {
  ModelConfig a, b;
  b.head = HeadType::kGapOnly;
  auto ma = build_hscnn(a);
  auto mb = build_hscnn(b);
  const std::size_t c = 128, h = static_cast<std::size_t>(a.hidden);
  CHECK(count_parameters(mb) < count_parameters(ma));
  CHECK(count_parameters(ma) - count_parameters(mb) == (c * h + h + h * 3 + 3) - (c * 3 + 3));
}

TEST_CASE("separable vs normal convolution parameter relation is exact") {
  for (int k : {3, 5}) {
    ModelConfig s, d;
    s.kernel = d.kernel = k;
    d.conv_type = ConvType::kNormal;
    auto ms = build_hscnn(s);
    auto md = build_hscnn(d);
    std::size_t diff = 0;
    std::size_t cin = 224;
    for (std::size_t w : {32u, 64u, 128u}) {
      diff += normal_block(cin, w, k) - separable_block(cin, w, k);
      cin = w;
    }
    CHECK(count_parameters(md) - count_parameters(ms) == diff);
  }
}

TEST_CASE("band scaling of widths for other cameras") {
  ModelConfig cfg;
  cfg.in_bands = 252;
  CHECK(cfg.resolved_widths() == std::vector<int>{40, 72, 144});
  cfg.in_bands = 3;
  CHECK(cfg.resolved_widths() == std::vector<int>{8, 8, 8});
  cfg.widths = {16, 16};
  CHECK_THROWS_AS(build_hscnn(cfg), Error);
}

TEST_CASE("adapted deep baselines are within 15% of their reference sizes") {
  auto r = build_resnet18_adapted(224);
  auto a = build_alexnet_adapted(224);
  const double nr = static_cast<double>(count_parameters(r));
  const double na = static_cast<double>(count_parameters(a));
  MESSAGE("ResNet-18 adapted: " << nr << ", AlexNet adapted: " << na);
  CHECK(std::abs(nr - 11e6) <= 0.15 * 11e6);
  CHECK(std::abs(na - 58e6) <= 0.15 * 58e6);
}

TEST_CASE("in_bands = 3 gives the stock first-layer shapes") {
  auto r = build_resnet18_adapted(3);
  auto a = build_alexnet_adapted(3);
  auto pr = r.parameters();
  auto pa = a.parameters();
  CHECK(pr.front().param->value.shape() == std::vector<int>{64, 3, 7, 7});
  CHECK(pa.front().param->value.shape() == std::vector<int>{64, 3, 11, 11});
}

TEST_CASE("forward output shape and inference determinism") {
  for (auto head : {HeadType::kGapPlusLinear, HeadType::kGapOnly, HeadType::kFullyConnected}) {
    ModelConfig cfg;
    cfg.in_bands = 16;
    cfg.head = head;
    auto m = build_hscnn(cfg);
    for (int n : {1, 3}) {
      auto x = random_input(n, 16, 64, 5 + n);
      auto y1 = m.infer(x);
      auto y2 = m.infer(x);
      CHECK(y1.shape() == std::vector<int>{n, 3});
      CHECK(y1.vec() == y2.vec());
      auto y3 = m.forward(x, false);
      CHECK(y3.vec() == y1.vec());
    }
  }
  auto r = build_resnet18_adapted(8);
  CHECK(r.infer(random_input(2, 8, 64, 1)).shape() == std::vector<int>{2, 3});
}

TEST_CASE("GAP head is invariant to whole-grid translation of an interior blob") {
  ModelConfig cfg;
  cfg.in_bands = 8;
  cfg.seed = 3;
  auto m = build_hscnn(cfg);
  // give the batch norms non-trivial running statistics
  (void)m.forward(random_input(4, 8, 64, 9), true);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0.2f, 1.0f);
  std::vector<float> blob(8 * 12 * 12);
  for (auto& v : blob) v = u(rng);
  auto place = [&](int oy, int ox) {
    Tensor x({1, 8, 64, 64});
    for (int c = 0; c < 8; ++c)
      for (int y = 0; y < 12; ++y)
        for (int xx = 0; xx < 12; ++xx) x[(c * 64 + oy + y) * 64 + ox + xx] = blob[(c * 12 + y) * 12 + xx];
    return x;
  };
  auto a = m.infer(place(16, 16));
  auto b = m.infer(place(24, 32));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-4);
}

TEST_CASE("checkpoint round trip restores identical outputs") {
  ModelConfig cfg;
  cfg.in_bands = 12;
  cfg.pooling = PoolingType::kMax;
  cfg.seed = 4;
  auto m = build_hscnn(cfg);
  (void)m.forward(random_input(4, 12, 32, 2), true);
  const auto path = std::filesystem::temp_directory_path() / "hsf_ckpt_test.bin";
  save_checkpoint(m, path, R"({"epoch": 7})");
  std::string extra;
  auto back = load_checkpoint(path, &extra);
  CHECK(back.config().to_json() == m.config().to_json());
  CHECK(extra.find("7") != std::string::npos);
  auto x = random_input(2, 12, 64, 3);
  CHECK(back.infer(x).vec() == m.infer(x).vec());
  std::filesystem::remove(path);

  const auto bad = std::filesystem::temp_directory_path() / "hsf_ckpt_bad.bin";
  { std::ofstream(bad) << "not a checkpoint"; }
  CHECK_THROWS_AS(load_checkpoint(bad), Error);
  std::filesystem::remove(bad);
}

TEST_CASE("model config json round trip") {
  ModelConfig c;
  c.in_bands = 100;
  c.conv_type = ConvType::kNormal;
  c.head = HeadType::kFullyConnected;
  c.widths = {8, 16, 24};
  auto d = ModelConfig::from_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
  CHECK(architecture_from_string("resnet18") == Architecture::kResNet18);
  CHECK_THROWS_AS(head_from_string("nope"), Error);
}
