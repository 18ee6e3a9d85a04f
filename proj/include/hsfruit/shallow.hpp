#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hsfruit/spectral.hpp"

namespace hsf {

/// Mean spectrum over the non-zero (fruit) pixels, or over all pixels when `mask_aware` is false.
/// Throws kEmptyMask for an all-zero cube in mask-aware mode.
std::vector<double> extract_shallow_features(const HyperCube& cube, bool mask_aware = true);

using FeatureMatrix = std::vector<std::vector<double>>;

/// Binary soft-margin SVM with an RBF kernel, trained by SMO with second-order working-set
/// selection. Labels are +1 / -1.
struct BinarySvm {
  std::vector<std::vector<double>> support;
  std::vector<double> coef;  // alpha_i * y_i
  double bias = 0.0;
  double gamma = 1.0;

  double decision(const std::vector<double>& x) const;
};

BinarySvm train_binary_svm(const FeatureMatrix& x, const std::vector<int>& y_pm1, double c, double gamma,
                           double tol = 1e-3, long max_iter = 1000000);

enum class ShallowKind { kSvmRbf, kKnn };
std::string to_string(ShallowKind k);

struct ShallowModel {
  ShallowKind kind = ShallowKind::kKnn;
  int n_classes = 3;
  double hyperparameter = 0.0;  // C for the SVM, k for kNN
  double gamma = 0.0;           // RBF width used by the SVM
  std::vector<double> grid;
  std::vector<double> cv_accuracy;  // mean CV accuracy per grid value
  int folds = 0;
  // fitted state
  FeatureMatrix train_x;
  std::vector<int> train_y;
  std::vector<BinarySvm> pairwise;  // one-vs-one, order (0,1), (0,2), ..., (1,2), ...

  int predict(const std::vector<double>& x) const;
  std::vector<int> predict(const FeatureMatrix& x) const;
  std::string to_json() const;
  static ShallowModel from_json(const std::string& text);
};

/// sklearn-style gamma = 1 / (n_features * variance of all entries).
double scale_gamma(const FeatureMatrix& x);

/// Stratified fold index per sample; throws kInsufficientData when folds exceed the smallest class.
std::vector<int> stratified_folds(const std::vector<int>& y, int folds, std::uint64_t seed);

/// Grid search by stratified k-fold CV on the given (training) data, then a refit on all of it.
/// Ties in mean accuracy go to the earlier grid value.
ShallowModel fit_svm(const FeatureMatrix& x, const std::vector<int>& y, std::vector<double> c_grid = {0.1, 1, 10, 100, 1000},
                     int folds = 5, std::uint64_t seed = 0, int n_classes = 3);
ShallowModel fit_knn(const FeatureMatrix& x, const std::vector<int>& y, std::vector<double> k_grid = {1, 3, 5, 7, 9},
                     int folds = 5, std::uint64_t seed = 0, int n_classes = 3);

}  // namespace hsf
