#include <cmath>
#include <random>

#include "doctest.h"
#include "hsfruit/shallow.hpp"

using namespace hsf;

namespace {

void gaussian_blobs(int per_class, double sep, std::uint64_t seed, FeatureMatrix& x, std::vector<int>& y) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < per_class; ++i) {
      x.push_back({c * sep + n(rng), n(rng)});
      y.push_back(c);
    }
}

}  // namespace

TEST_CASE("masked mean spectrum") {
  const auto axis = WavelengthAxis::linspace(400, 1000, 5);
  HyperCube constant(4, 4, axis, std::vector<float>(4 * 4 * 5, 0.375f));
  for (double v : extract_shallow_features(constant)) CHECK(v == 0.375);

  HyperCube half(4, 4, axis);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x)
      for (int b = 0; b < 5; ++b) half.at(y, x, b) = 1.0f;
  for (double v : extract_shallow_features(half)) CHECK(v == 1.0);
  for (double v : extract_shallow_features(half, false)) CHECK(v == 0.5);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  HyperCube r(9, 7, axis);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 7; ++x)
      if ((x * 3 + y) % 4 != 0)
        for (int b = 0; b < 5; ++b) r.at(y, x, b) = u(rng);
  const auto f = extract_shallow_features(r);
  for (int b = 0; b < 5; ++b) {
    double s = 0;
    int n = 0;
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 7; ++x)
        if ((x * 3 + y) % 4 != 0) s += r.at(y, x, b), ++n;
    CHECK(std::abs(f[b] - s / n) <= 1e-9);
  }

  HyperCube zero(3, 3, axis);
  try {
    (void)extract_shallow_features(zero);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kEmptyMask);
  }
}

TEST_CASE("binary SVM separates a linearly separable set with margin") {
  FeatureMatrix x{{0, 0}, {0, 1}, {1, 0}, {3, 3}, {3, 4}, {4, 3}};
  std::vector<int> y{-1, -1, -1, 1, 1, 1};
  auto m = train_binary_svm(x, y, 10.0, 0.5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(m.decision(x[i]) * y[i] > 0.9);
  CHECK(!m.support.empty());
  double sum = 0;
  for (double c : m.coef) {
    CHECK(std::abs(c) <= 10.0 + 1e-9);
    sum += c;
  }
  CHECK(std::abs(sum) <= 1e-9);  // sum alpha_i y_i = 0
}

TEST_CASE("well separated Gaussian classes: CV accuracy >= 95% for SVM and kNN") {
  FeatureMatrix x;
  std::vector<int> y;
  gaussian_blobs(40, 6.0, 1, x, y);
  auto svm = fit_svm(x, y, {0.1, 1, 10, 100, 1000}, 5, 0, 2);
  auto knn = fit_knn(x, y, {1, 3, 5, 7, 9}, 5, 0, 2);
  const double best_svm = *std::max_element(svm.cv_accuracy.begin(), svm.cv_accuracy.end());
  const double best_knn = *std::max_element(knn.cv_accuracy.begin(), knn.cv_accuracy.end());
  CHECK(best_svm >= 0.95);
  CHECK(best_knn >= 0.95);
  CHECK(svm.cv_accuracy.size() == 5);
  // the recorded choice is the first grid value with the highest CV accuracy
  const auto first_best = std::max_element(svm.cv_accuracy.begin(), svm.cv_accuracy.end()) - svm.cv_accuracy.begin();
  CHECK(svm.hyperparameter == svm.grid[first_best]);

  FeatureMatrix tx;
  std::vector<int> ty;
  gaussian_blobs(50, 6.0, 99, tx, ty);
  const auto ps = svm.predict(tx), pk = knn.predict(tx);
  int hs = 0, hk = 0;
  for (std::size_t i = 0; i < ty.size(); ++i) hs += ps[i] == ty[i], hk += pk[i] == ty[i];
  CHECK(hs >= 95);
  CHECK(hk >= 95);
}

TEST_CASE("1-NN memorises its training set") {
  FeatureMatrix x;
  std::vector<int> y;
  gaussian_blobs(20, 0.5, 4, x, y);  // heavily overlapping
  auto m = fit_knn(x, y, {1}, 5, 0, 2);
  CHECK(m.hyperparameter == 1.0);
  CHECK(m.predict(x) == y);
}

TEST_CASE("three-class one-vs-one SVM") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.3);
  FeatureMatrix x;
  std::vector<int> y;
  const double centres[3][2] = {{0, 0}, {4, 0}, {0, 4}};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 15; ++i) {
      x.push_back({centres[c][0] + n(rng), centres[c][1] + n(rng)});
      y.push_back(c);
    }
  auto m = fit_svm(x, y, {1, 10}, 3, 5, 3);
  CHECK(m.pairwise.size() == 3);
  CHECK(m.predict(std::vector<double>{4, 0.1}) == 1);
  CHECK(m.predict(std::vector<double>{0.1, 4}) == 2);
  auto back = ShallowModel::from_json(m.to_json());
  CHECK(back.predict(x) == m.predict(x));
  auto k = fit_knn(x, y, {3}, 3, 5, 3);
  CHECK(ShallowModel::from_json(k.to_json()).predict(x) == k.predict(x));
}

TEST_CASE("fit errors: folds beyond class size, empty grid") {
  FeatureMatrix x;
  std::vector<int> y;
  gaussian_blobs(4, 6.0, 1, x, y);
  try {
    (void)fit_knn(x, y, {1}, 5, 0, 2);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientData);
  }
  CHECK_THROWS_AS(fit_svm(x, y, {}, 2, 0, 2), Error);
  CHECK_THROWS_AS(fit_svm(x, y, {1.0}, 1, 0, 2), Error);
  CHECK_THROWS_AS(fit_knn(x, y, {2.5}, 2, 0, 2), Error);
}

TEST_CASE("stratified folds keep class proportions") {
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) y.push_back(i < 20 ? 0 : 1);
  const auto f = stratified_folds(y, 5, 3);
  for (int k = 0; k < 5; ++k) {
    int c0 = 0, c1 = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (f[i] == k) (y[i] == 0 ? c0 : c1)++;
    CHECK(c0 == 4);
    CHECK(c1 == 2);
  }
}
