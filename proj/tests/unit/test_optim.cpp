#include <cmath>

#include "doctest.h"
#include "hsfruit/optim.hpp"

using namespace hsf;

namespace {

struct Quadratic {
  nn::Param p{"w", Tensor({3}, std::vector<float>{1.0f, -2.0f, 0.5f})};
  std::vector<nn::NamedParam> params() { return {{"w", &p}}; }
  void grad() {
    for (std::size_t i = 0; i < 3; ++i) p.grad[i] = 2.0f * p.value[i];
  }
  double loss() const {
    double s = 0;
    for (std::size_t i = 0; i < 3; ++i) s += p.value[i] * p.value[i];
    return s;
  }
};

}  // namespace

TEST_CASE("zero gradient leaves parameters unchanged for every optimizer") {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam, OptimizerKind::kAdaboundDefault,
                    OptimizerKind::kAdaboundLr01}) {
    Quadratic q;
    const auto before = q.p.value.vec();
    OptimizerOptions o;
    o.kind = kind;
    Optimizer opt(q.params(), o);
    for (int i = 0; i < 5; ++i) {
      opt.zero_grad();
      opt.step();
    }
    CHECK(q.p.value.vec() == before);
  }
}

TEST_CASE("optimizers decrease a quadratic") {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam, OptimizerKind::kAdaboundDefault,
                    OptimizerKind::kAdaboundLr01}) {
    Quadratic q;
    OptimizerOptions o;
    o.kind = kind;
    Optimizer opt(q.params(), o);
    const double l0 = q.loss();
    for (int i = 0; i < 200; ++i) {
      opt.zero_grad();
      q.grad();
      opt.step();
    }
    CHECK(q.loss() < l0);
  }
}

TEST_CASE("adabound first step matches a hand computation") {
  // t = 1: m = 0.1 g, v = 0.001 g^2, step = lr * sqrt(1 - b2) / (1 - b1), rate = step / (sqrt(v) + eps)
  // clipped to [0.1 * (1 - 1 / 1.001), 0.1 * (1 + 1 / 0.001)].
  Quadratic q;
  OptimizerOptions o;
  o.kind = OptimizerKind::kAdaboundLr01;
  Optimizer opt(q.params(), o);
  CHECK(opt.learning_rate() == 1e-2);
  q.grad();
  const double g0 = q.p.grad[0], w0 = q.p.value[0];
  opt.step();
  const double m = 0.1 * g0, v = 0.001 * g0 * g0;
  double rate = 1e-2 * std::sqrt(0.001) / 0.1 / (std::sqrt(v) + 1e-8);
  rate = std::clamp(rate, 0.1 * (1 - 1 / 1.001), 0.1 * (1 + 1 / 0.001));
  CHECK(q.p.value[0] == doctest::Approx(w0 - rate * m).epsilon(1e-6));
}

TEST_CASE("optimizer names and defaults") {
  CHECK(optimizer_from_string("adabound_default") == OptimizerKind::kAdaboundDefault);
  CHECK(default_learning_rate(OptimizerKind::kAdaboundDefault) == 1e-3);
  CHECK(default_learning_rate(OptimizerKind::kAdaboundLr01) == 1e-2);
  CHECK(default_learning_rate(OptimizerKind::kSgd) == 1e-2);
  CHECK(to_string(OptimizerKind::kAdam) == "adam");
  CHECK_THROWS_AS(optimizer_from_string("lbfgs"), Error);
}

TEST_CASE("learning-rate scale multiplies the step of matching parameters only") {
  for (auto kind : {OptimizerKind::kSgd, OptimizerKind::kAdam, OptimizerKind::kAdaboundDefault,
                    OptimizerKind::kAdaboundLr01}) {
    nn::Param a{"a", Tensor({2}, std::vector<float>{1.0f, -1.0f})};
    nn::Param b = a, c = a;
    OptimizerOptions o;
    o.kind = kind;
    Optimizer opt({{"enc.a", &a}, {"enc.b", &b}, {"head.c", &c}}, o);
    opt.scale_learning_rate("enc.b", 0.25);
    opt.scale_learning_rate("head.", 0.0);
    for (int s = 0; s < 3; ++s) {
      for (auto* p : {&a, &b, &c}) {
        p->grad[0] = 0.3f;
        p->grad[1] = -0.7f;
      }
      const float a0 = a.value[0], b0 = b.value[0];
      opt.step();
      CHECK(b.value[0] - b0 == doctest::Approx(0.25 * (a.value[0] - a0)).epsilon(1e-5));
    }
    CHECK(c.value[0] == 1.0f);
    CHECK(c.value[1] == -1.0f);
    CHECK_THROWS_AS(opt.scale_learning_rate("enc.", -1.0), Error);
  }
}
