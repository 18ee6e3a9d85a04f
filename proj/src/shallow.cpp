#include "hsfruit/shallow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

namespace hsf {

std::vector<double> extract_shallow_features(const HyperCube& cube, bool mask_aware) {
  const int b = cube.bands();
  require(b > 0 && cube.pixel_count() > 0, ErrorCode::kInvalidArgument, "empty cube");
  std::vector<double> sum(static_cast<std::size_t>(b), 0.0);
  std::size_t n = 0;
  for (int y = 0; y < cube.height(); ++y)
    for (int x = 0; x < cube.width(); ++x) {
      auto px = cube.pixel(y, x);
      if (mask_aware && std::all_of(px.begin(), px.end(), [](float v) { return v == 0.0f; })) continue;
      for (int k = 0; k < b; ++k) sum[k] += px[k];
      ++n;
    }
  require(n > 0, ErrorCode::kEmptyMask, "cube has no non-zero pixels");
  for (double& v : sum) v /= static_cast<double>(n);
  return sum;
}

namespace {

double sqdist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void check_xy(const FeatureMatrix& x, const std::vector<int>& y, int n_classes) {
  require(!x.empty() && x.size() == y.size(), ErrorCode::kShapeMismatch, "features and labels differ in length");
  const std::size_t f = x.front().size();
  require(f > 0, ErrorCode::kInvalidArgument, "zero-length feature vectors");
  for (const auto& row : x) require(row.size() == f, ErrorCode::kShapeMismatch, "ragged feature matrix");
  for (int c : y) require(c >= 0 && c < n_classes, ErrorCode::kOutOfRange, "label out of range: " + std::to_string(c));
}

}  // namespace

double BinarySvm::decision(const std::vector<double>& x) const {
  double s = bias;
  for (std::size_t i = 0; i < support.size(); ++i) s += coef[i] * std::exp(-gamma * sqdist(support[i], x));
  return s;
}

BinarySvm train_binary_svm(const FeatureMatrix& x, const std::vector<int>& y, double c, double gamma, double tol,
                           long max_iter) {
  require(c > 0.0 && gamma > 0.0, ErrorCode::kInvalidArgument, "SVM needs C > 0 and gamma > 0");
  require(x.size() == y.size() && !x.empty(), ErrorCode::kShapeMismatch, "features and labels differ in length");
  const std::size_t n = x.size();
  bool has_pos = false, has_neg = false;
  for (int v : y) {
    require(v == 1 || v == -1, ErrorCode::kInvalidArgument, "binary SVM labels must be +1/-1");
    (v > 0 ? has_pos : has_neg) = true;
  }
  require(has_pos && has_neg, ErrorCode::kSingleClass, "binary SVM needs both classes");

  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    k[i * n + i] = 1.0;
    for (std::size_t j = 0; j < i; ++j) k[i * n + j] = k[j * n + i] = std::exp(-gamma * sqdist(x[i], x[j]));
  }
  auto kk = [&](std::size_t i, std::size_t j) { return k[i * n + j]; };
  constexpr double kTau = 1e-12;

  std::vector<double> alpha(n, 0.0), grad(n, -1.0);
  auto upper = [&](std::size_t t) { return alpha[t] >= c; };
  auto lower = [&](std::size_t t) { return alpha[t] <= 0.0; };

  for (long iter = 0; iter < max_iter; ++iter) {
    // second-order working set selection
    double gmax = -std::numeric_limits<double>::infinity();
    std::size_t i = n;
    for (std::size_t t = 0; t < n; ++t) {
      if (y[t] == 1) {
        if (!upper(t) && -grad[t] >= gmax) gmax = -grad[t], i = t;
      } else if (!lower(t) && grad[t] >= gmax) {
        gmax = grad[t], i = t;
      }
    }
    if (i == n) break;
    double gmax2 = -std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    std::size_t j = n;
    for (std::size_t t = 0; t < n; ++t) {
      double diff;
      if (y[t] == 1) {
        if (lower(t)) continue;
        diff = gmax + grad[t];
        gmax2 = std::max(gmax2, grad[t]);
      } else {
        if (upper(t)) continue;
        diff = gmax - grad[t];
        gmax2 = std::max(gmax2, -grad[t]);
      }
      if (diff > 0.0) {
        double quad = kk(i, i) + kk(t, t) - 2.0 * kk(i, t);
        if (quad <= 0.0) quad = kTau;
        const double obj = -(diff * diff) / quad;
        if (obj <= best) best = obj, j = t;
      }
    }
    if (gmax + gmax2 < tol || j == n) break;

    const double ai = alpha[i], aj = alpha[j];
    const double qij = y[i] * y[j] * kk(i, j);
    if (y[i] != y[j]) {
      double quad = kk(i, i) + kk(j, j) + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) alpha[j] = 0, alpha[i] = diff;
      } else if (alpha[i] < 0) {
        alpha[i] = 0, alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > c) alpha[i] = c, alpha[j] = c - diff;
      } else if (alpha[j] > c) {
        alpha[j] = c, alpha[i] = c + diff;
      }
    } else {
      double quad = kk(i, i) + kk(j, j) - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) alpha[i] = c, alpha[j] = sum - c;
      } else if (alpha[j] < 0) {
        alpha[j] = 0, alpha[i] = sum;
      }
      if (sum > c) {
        if (alpha[j] > c) alpha[j] = c, alpha[i] = sum - c;
      } else if (alpha[i] < 0) {
        alpha[i] = 0, alpha[j] = sum;
      }
    }
    const double dai = alpha[i] - ai, daj = alpha[j] - aj;
    for (std::size_t t = 0; t < n; ++t)
      grad[t] += y[t] * (y[i] * kk(i, t) * dai + y[j] * kk(j, t) * daj);
  }

  // rho from free vectors, or the midpoint of the feasible interval
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  int n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (upper(t)) {
      if (y[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / n_free : (ub + lb) / 2.0;

  BinarySvm m;
  m.gamma = gamma;
  m.bias = -rho;
  for (std::size_t t = 0; t < n; ++t)
    if (alpha[t] > 0.0) {
      m.support.push_back(x[t]);
      m.coef.push_back(alpha[t] * y[t]);
    }
  return m;
}

std::string to_string(ShallowKind k) { return k == ShallowKind::kSvmRbf ? "svm_rbf" : "knn"; }

double scale_gamma(const FeatureMatrix& x) {
  double s = 0.0, s2 = 0.0;
  std::size_t n = 0;
  for (const auto& row : x)
    for (double v : row) s += v, s2 += v * v, ++n;
  require(n > 0, ErrorCode::kInvalidArgument, "empty feature matrix");
  const double mean = s / n;
  const double var = std::max(0.0, s2 / n - mean * mean);
  return var > 0.0 ? 1.0 / (static_cast<double>(x.front().size()) * var) : 1.0;
}

std::vector<int> stratified_folds(const std::vector<int>& y, int folds, std::uint64_t seed) {
  require(folds >= 2, ErrorCode::kInvalidArgument, "need at least 2 folds");
  const int k = y.empty() ? 0 : *std::max_element(y.begin(), y.end()) + 1;
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(static_cast<int>(i));
  std::vector<int> fold(y.size(), 0);
  std::mt19937_64 rng(seed);
  int offset = 0;
  for (auto& idx : by_class) {
    if (idx.empty()) continue;
    require(static_cast<int>(idx.size()) >= folds, ErrorCode::kInsufficientData,
            std::to_string(folds) + " folds exceed the smallest class size " + std::to_string(idx.size()));
    std::shuffle(idx.begin(), idx.end(), rng);
    // rotate the starting fold per class so fold sizes stay balanced overall
    for (std::size_t i = 0; i < idx.size(); ++i) fold[idx[i]] = static_cast<int>((i + offset) % folds);
    offset = static_cast<int>((offset + idx.size()) % folds);
  }
  return fold;
}

int ShallowModel::predict(const std::vector<double>& x) const {
  std::vector<int> votes(static_cast<std::size_t>(n_classes), 0);
  if (kind == ShallowKind::kSvmRbf) {
    require(!pairwise.empty(), ErrorCode::kState, "SVM not fitted");
    std::size_t p = 0;
    for (int a = 0; a < n_classes; ++a)
      for (int b = a + 1; b < n_classes; ++b, ++p) ++votes[pairwise[p].decision(x) > 0.0 ? a : b];
  } else {
    require(!train_x.empty(), ErrorCode::kState, "kNN not fitted");
    const std::size_t k = std::min(train_x.size(), static_cast<std::size_t>(std::max(1.0, hyperparameter)));
    std::vector<std::pair<double, int>> d(train_x.size());
    for (std::size_t i = 0; i < train_x.size(); ++i) d[i] = {sqdist(train_x[i], x), static_cast<int>(i)};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    for (std::size_t i = 0; i < k; ++i) ++votes[train_y[d[i].second]];
  }
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

std::vector<int> ShallowModel::predict(const FeatureMatrix& x) const {
  std::vector<int> out;
  out.reserve(x.size());
  for (const auto& row : x) out.push_back(predict(row));
  return out;
}

std::string ShallowModel::to_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind);
  j["n_classes"] = n_classes;
  j["hyperparameter"] = hyperparameter;
  j["gamma"] = gamma;
  j["grid"] = grid;
  j["cv_accuracy"] = cv_accuracy;
  j["folds"] = folds;
  if (kind == ShallowKind::kKnn) {
    j["train_x"] = train_x;
    j["train_y"] = train_y;
  } else {
    auto arr = nlohmann::json::array();
    for (const auto& m : pairwise)
      arr.push_back({{"support", m.support}, {"coef", m.coef}, {"bias", m.bias}, {"gamma", m.gamma}});
    j["pairwise"] = arr;
  }
  return j.dump();
}

ShallowModel ShallowModel::from_json(const std::string& text) {
  ShallowModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    const std::string kind = j.at("kind");
    require(kind == "svm_rbf" || kind == "knn", ErrorCode::kFormat, "unknown shallow model kind " + kind);
    m.kind = kind == "svm_rbf" ? ShallowKind::kSvmRbf : ShallowKind::kKnn;
    m.n_classes = j.at("n_classes");
    m.hyperparameter = j.at("hyperparameter");
    m.gamma = j.value("gamma", 0.0);
    m.grid = j.value("grid", std::vector<double>{});
    m.cv_accuracy = j.value("cv_accuracy", std::vector<double>{});
    m.folds = j.value("folds", 0);
    if (m.kind == ShallowKind::kKnn) {
      m.train_x = j.at("train_x").get<FeatureMatrix>();
      m.train_y = j.at("train_y").get<std::vector<int>>();
    } else {
      for (const auto& e : j.at("pairwise")) {
        BinarySvm s;
        s.support = e.at("support").get<FeatureMatrix>();
        s.coef = e.at("coef").get<std::vector<double>>();
        s.bias = e.at("bias");
        s.gamma = e.at("gamma");
        m.pairwise.push_back(std::move(s));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad shallow model json: ") + e.what());
  }
  return m;
}

namespace {

ShallowModel fit_once(ShallowKind kind, const FeatureMatrix& x, const std::vector<int>& y, double hyper, int n_classes) {
  ShallowModel m;
  m.kind = kind;
  m.n_classes = n_classes;
  m.hyperparameter = hyper;
  if (kind == ShallowKind::kKnn) {
    m.train_x = x;
    m.train_y = y;
    return m;
  }
  m.gamma = scale_gamma(x);
  for (int a = 0; a < n_classes; ++a)
    for (int b = a + 1; b < n_classes; ++b) {
      FeatureMatrix px;
      std::vector<int> py;
      for (std::size_t i = 0; i < y.size(); ++i)
        if (y[i] == a || y[i] == b) {
          px.push_back(x[i]);
          py.push_back(y[i] == a ? 1 : -1);
        }
      m.pairwise.push_back(train_binary_svm(px, py, hyper, m.gamma));
    }
  return m;
}

ShallowModel fit_grid(ShallowKind kind, const FeatureMatrix& x, const std::vector<int>& y, std::vector<double> grid,
                      int folds, std::uint64_t seed, int n_classes) {
  require(!grid.empty(), ErrorCode::kInvalidArgument, "empty hyperparameter grid");
  require(n_classes >= 2, ErrorCode::kInvalidArgument, "need at least 2 classes");
  check_xy(x, y, n_classes);
  for (double g : grid) require(g > 0.0, ErrorCode::kInvalidArgument, "grid values must be positive");
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (int c : y) ++counts[c];
  for (int c = 0; c < n_classes; ++c)
    require(counts[c] >= folds, ErrorCode::kInsufficientData,
            "class " + std::to_string(c) + " has " + std::to_string(counts[c]) + " samples, fewer than " +
                std::to_string(folds) + " folds");
  const auto fold = stratified_folds(y, folds, seed);

  std::vector<double> acc(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double total = 0.0;
    for (int f = 0; f < folds; ++f) {
      FeatureMatrix tx, vx;
      std::vector<int> ty, vy;
      for (std::size_t i = 0; i < y.size(); ++i) {
        if (fold[i] == f) vx.push_back(x[i]), vy.push_back(y[i]);
        else tx.push_back(x[i]), ty.push_back(y[i]);
      }
      const auto m = fit_once(kind, tx, ty, grid[g], n_classes);
      int hit = 0;
      for (std::size_t i = 0; i < vx.size(); ++i) hit += m.predict(vx[i]) == vy[i];
      total += static_cast<double>(hit) / static_cast<double>(vx.size());
    }
    acc[g] = total / folds;
  }
  const std::size_t best = static_cast<std::size_t>(std::max_element(acc.begin(), acc.end()) - acc.begin());
  auto m = fit_once(kind, x, y, grid[best], n_classes);
  m.grid = std::move(grid);
  m.cv_accuracy = std::move(acc);
  m.folds = folds;
  return m;
}

}  // namespace

ShallowModel fit_svm(const FeatureMatrix& x, const std::vector<int>& y, std::vector<double> c_grid, int folds,
                     std::uint64_t seed, int n_classes) {
  return fit_grid(ShallowKind::kSvmRbf, x, y, std::move(c_grid), folds, seed, n_classes);
}

ShallowModel fit_knn(const FeatureMatrix& x, const std::vector<int>& y, std::vector<double> k_grid, int folds,
                     std::uint64_t seed, int n_classes) {
  for (double k : k_grid) require(k == std::floor(k), ErrorCode::kInvalidArgument, "k must be an integer");
  return fit_grid(ShallowKind::kKnn, x, y, std::move(k_grid), folds, seed, n_classes);
}

}  // namespace hsf
