#include "hsfruit/preprocess.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>

#include "hsfruit/cie.hpp"
#include "hsfruit/error.hpp"
#include "hsfruit/optim.hpp"

namespace hsf {

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

void SpectraMatrix::append(std::span<const float> spectrum) {
  if (bands == 0) bands = static_cast<int>(spectrum.size());
  require(static_cast<int>(spectrum.size()) == bands, ErrorCode::kShapeMismatch, "spectrum length differs");
  data.insert(data.end(), spectrum.begin(), spectrum.end());
}

bool is_foreground(std::span<const float> spectrum) {
  return std::any_of(spectrum.begin(), spectrum.end(), [](float v) { return v != 0.0f; });
}

// ---------------------------------------------------------------------------
// pixel classifier

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor standardized_rows(const SpectraMatrix& m, std::span<const std::size_t> rows, const std::vector<float>& mean,
                         const std::vector<float>& scale) {
  const int b = m.bands;
  Tensor t({static_cast<int>(rows.size()), b});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto r = m.row(rows[i]);
    for (int j = 0; j < b; ++j) t[i * b + j] = (r[j] - mean[j]) * scale[j];
  }
  return t;
}

}  // namespace

PixelClassifier::PixelClassifier(int bands, int hidden_units, std::uint64_t seed) : bands_(bands) {
  require(bands > 0 && hidden_units > 0, ErrorCode::kInvalidArgument, "pixel classifier needs positive sizes");
  nn::Rng rng(seed);
  net_.emplace<nn::Linear>("hidden", bands, hidden_units, rng);
  net_.emplace<nn::ReLU>("act");
  net_.emplace<nn::Linear>("out", hidden_units, 1, rng);
  mean_.assign(bands, 0.0f);
  inv_std_.assign(bands, 1.0f);
}

PixelClassifier PixelClassifier::constant(int bands, double p) {
  require(p >= 0.0 && p <= 1.0, ErrorCode::kInvalidArgument, "constant probability must lie in [0, 1]");
  PixelClassifier c(bands, 1, 0);
  auto params = nn::collect_params(c.net_);
  for (auto& np : params) np.param->value.fill(0.0f);
  // huge logits saturate the sigmoid to exactly 0 or 1
  const double logit = p <= 0.0 ? -1e30 : p >= 1.0 ? 1e30 : std::log(p / (1.0 - p));
  params.back().param->value[0] = static_cast<float>(logit);
  return c;
}

double PixelClassifier::probability(std::span<const float> spectrum) const {
  require(static_cast<int>(spectrum.size()) == bands_, ErrorCode::kShapeMismatch,
          "classifier expects " + std::to_string(bands_) + " bands, got " + std::to_string(spectrum.size()));
  Tensor x({1, bands_});
  for (int j = 0; j < bands_; ++j) x[j] = (spectrum[j] - mean_[j]) * inv_std_[j];
  return std::clamp(sigmoid(net_.infer(x)[0]), 0.0, 1.0);
}

std::vector<double> PixelClassifier::probability_map(const HyperCube& cube) const {
  require(cube.bands() == bands_, ErrorCode::kShapeMismatch,
          "classifier expects " + std::to_string(bands_) + " bands, cube has " + std::to_string(cube.bands()));
  const std::size_t n = cube.pixel_count();
  std::vector<double> out(n);
  const std::size_t chunk = 4096;
  auto src = cube.data();
  for (std::size_t s = 0; s < n; s += chunk) {
    const std::size_t e = std::min(n, s + chunk);
    Tensor x({static_cast<int>(e - s), bands_});
    for (std::size_t i = s; i < e; ++i)
      for (int j = 0; j < bands_; ++j) x[(i - s) * bands_ + j] = (src[i * bands_ + j] - mean_[j]) * inv_std_[j];
    const Tensor z = net_.infer(x);
    for (std::size_t i = s; i < e; ++i) out[i] = std::clamp(sigmoid(z[i - s]), 0.0, 1.0);
  }
  return out;
}

PixelClassifier train_background_classifier(const LabeledPixels& pixels, const PixelClassifierOptions& opt) {
  const std::size_t n = pixels.spectra.rows();
  require(n > 0 && pixels.is_fruit.size() == n, ErrorCode::kInvalidArgument,
          "labelled pixel set is empty or labels do not match spectra");
  const std::size_t fruit = static_cast<std::size_t>(std::count(pixels.is_fruit.begin(), pixels.is_fruit.end(), 1));
  if (fruit == 0 || fruit == n)
    fail(ErrorCode::kSingleClass, fruit == 0 ? "no fruit pixels in classifier training data"
                                             : "no background pixels in classifier training data");
  const int b = pixels.spectra.bands;
  nn::Rng rng(opt.seed);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  if (order.size() > opt.max_training_pixels) order.resize(opt.max_training_pixels);
  std::size_t n_hold = static_cast<std::size_t>(std::floor(order.size() * opt.holdout_fraction));
  if (order.size() >= 2) n_hold = std::clamp<std::size_t>(n_hold, 1, order.size() - 1);
  else n_hold = 0;
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());

  PixelClassifier clf(b, opt.hidden_units, rng());
  // per-band standardisation from the training rows
  std::vector<double> mu(b, 0.0), var(b, 0.0);
  for (std::size_t r : train) {
    auto s = pixels.spectra.row(r);
    for (int j = 0; j < b; ++j) mu[j] += s[j];
  }
  for (int j = 0; j < b; ++j) mu[j] /= static_cast<double>(train.size());
  for (std::size_t r : train) {
    auto s = pixels.spectra.row(r);
    for (int j = 0; j < b; ++j) var[j] += (s[j] - mu[j]) * (s[j] - mu[j]);
  }
  for (int j = 0; j < b; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(train.size()));
    clf.band_mean()[j] = static_cast<float>(mu[j]);
    clf.band_scale()[j] = sd > 1e-12 ? static_cast<float>(1.0 / sd) : 1.0f;
  }

  nn::Sequential& net = clf.network();
  OptimizerOptions oo;
  oo.kind = OptimizerKind::kAdam;
  oo.learning_rate = opt.learning_rate;
  Optimizer optim(nn::collect_params(net), oo);
  const std::size_t bs = static_cast<std::size_t>(std::max(1, opt.batch_size));
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t s = 0; s < train.size(); s += bs) {
      const std::size_t e = std::min(train.size(), s + bs);
      std::span<const std::size_t> rows(train.data() + s, e - s);
      const Tensor x = standardized_rows(pixels.spectra, rows, clf.band_mean(), clf.band_scale());
      optim.zero_grad();
      const Tensor z = net.forward(x, true);
      // binary cross-entropy on the logit, averaged over the batch
      Tensor g(z.shape());
      for (std::size_t i = 0; i < rows.size(); ++i)
        g[i] = static_cast<float>((sigmoid(z[i]) - pixels.is_fruit[rows[i]]) / static_cast<double>(rows.size()));
      net.backward(g, false);
      optim.step();
    }
  }

  const auto& eval_rows = hold.empty() ? train : hold;
  std::size_t correct = 0;
  const Tensor x = standardized_rows(pixels.spectra, eval_rows, clf.band_mean(), clf.band_scale());
  const Tensor z = net.infer(x);
  for (std::size_t i = 0; i < eval_rows.size(); ++i)
    correct += static_cast<std::size_t>((z[i] > 0.0f ? 1 : 0) == pixels.is_fruit[eval_rows[i]]);
  clf.set_heldout_accuracy(static_cast<double>(correct) / static_cast<double>(eval_rows.size()));
  return clf;
}

BinaryMask largest_component(const BinaryMask& mask) {
  const int h = mask.height, w = mask.width;
  std::vector<int> label(mask.data.size(), -1);
  int best = -1;
  std::size_t best_size = 0;
  int next = 0;
  std::deque<int> queue;
  for (int start = 0; start < h * w; ++start) {
    if (!mask.data[start] || label[start] >= 0) continue;
    std::size_t size = 0;
    label[start] = next;
    queue.push_back(start);
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      ++size;
      const int y = p / w, x = p % w;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
        const int qi = q[0] * w + q[1];
        if (mask.data[qi] && label[qi] < 0) {
          label[qi] = next;
          queue.push_back(qi);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best = next;
    }
    ++next;
  }
  BinaryMask out(h, w);
  if (best >= 0)
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = label[i] == best ? 1 : 0;
  return out;
}

BinaryMask segment(const HyperCube& cube, const PixelClassifier& classifier, double threshold) {
  const auto p = classifier.probability_map(cube);
  BinaryMask raw(cube.height(), cube.width());
  for (std::size_t i = 0; i < p.size(); ++i) raw.data[i] = p[i] > threshold ? 1 : 0;
  return largest_component(raw);
}

HyperCube crop_to_fruit(const HyperCube& cube, const BinaryMask& mask) {
  require(mask.height == cube.height() && mask.width == cube.width(), ErrorCode::kShapeMismatch,
          "mask shape does not match cube");
  int y0 = mask.height, y1 = -1, x0 = mask.width, x1 = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        y0 = std::min(y0, y);
        y1 = std::max(y1, y);
        x0 = std::min(x0, x);
        x1 = std::max(x1, x);
      }
  if (y1 < 0) fail(ErrorCode::kEmptyMask, "cannot crop: the fruit mask is empty");
  const int h = y1 - y0 + 1, w = x1 - x0 + 1;
  HyperCube out(h, w, cube.axis());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y + y0, x + x0)) continue;
      auto src = cube.pixel(y + y0, x + x0);
      std::copy(src.begin(), src.end(), out.pixel(y, x).begin());
    }
  return out;
}

HyperCube resize(const HyperCube& cube, int out_h, int out_w) {
  const int h = cube.height(), w = cube.width(), b = cube.bands();
  require(h >= 1 && w >= 1 && b >= 1, ErrorCode::kInvalidArgument, "cannot resize an empty cube");
  require(out_h >= 1 && out_w >= 1, ErrorCode::kInvalidArgument, "resize target must be at least 1x1");
  if (out_h == h && out_w == w) {
    HyperCube copy(h, w, cube.axis(), std::vector<float>(cube.data().begin(), cube.data().end()));
    return copy;
  }
  struct Tap {
    int i0, i1;
    double f;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double s = (o + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(s));
      const int i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, s - i0};
    }
    return t;
  };
  const auto ty = taps(h, out_h), tx = taps(w, out_w);
  HyperCube out(out_h, out_w, cube.axis());
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const Tap& a = ty[y];
      const Tap& c = tx[x];
      auto p00 = cube.pixel(a.i0, c.i0), p01 = cube.pixel(a.i0, c.i1);
      auto p10 = cube.pixel(a.i1, c.i0), p11 = cube.pixel(a.i1, c.i1);
      auto dst = out.pixel(y, x);
      for (int k = 0; k < b; ++k) {
        const double top = p00[k] + c.f * (static_cast<double>(p01[k]) - p00[k]);
        const double bot = p10[k] + c.f * (static_cast<double>(p11[k]) - p10[k]);
        dst[k] = static_cast<float>(top + a.f * (bot - top));
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// RGB

RgbProjector::RgbProjector(const WavelengthAxis& axis) {
  const std::size_t n = axis.size();
  require(n > 0, ErrorCode::kInvalidArgument, "empty wavelength axis");
  weights_.assign(n, {0.0, 0.0, 0.0});
  // Each band covers the interval halfway to its neighbours; the outer bands extend symmetrically.
  std::array<double, 3> xyz_white{0.0, 0.0, 0.0};
  std::vector<std::array<double, 3>> xyz(n, {0.0, 0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) {
    double lo, hi;
    if (n == 1) {
      lo = axis[0] - 2.5;
      hi = axis[0] + 2.5;
    } else {
      lo = i == 0 ? axis[0] - 0.5 * (axis[1] - axis[0]) : 0.5 * (axis[i - 1] + axis[i]);
      hi = i + 1 == n ? axis[i] + 0.5 * (axis[i] - axis[i - 1]) : 0.5 * (axis[i] + axis[i + 1]);
    }
    const double width = std::min(hi, cie::kVisibleHighNm) - std::max(lo, cie::kVisibleLowNm);
    if (width <= 0.0) continue;
    const auto c = cie::cmf_at(axis[i]);
    xyz[i] = {c.x_bar * width, c.y_bar * width, c.z_bar * width};
    for (int k = 0; k < 3; ++k) xyz_white[k] += xyz[i][k];
  }
  if (xyz_white[0] <= 0.0 || xyz_white[1] <= 0.0 || xyz_white[2] <= 0.0)
    fail(ErrorCode::kNoVisibleBand, "no visible band: the wavelength axis (" + std::to_string(axis.front()) + "-" +
                                        std::to_string(axis.back()) + " nm) does not overlap 380-740 nm");
  for (std::size_t i = 0; i < n; ++i) {
    std::array<double, 3> s;
    for (int k = 0; k < 3; ++k) s[k] = xyz[i][k] / xyz_white[k] * cie::kD65White[k];
    for (int r = 0; r < 3; ++r)
      weights_[i][r] = cie::kXyzToSrgb[r][0] * s[0] + cie::kXyzToSrgb[r][1] * s[1] + cie::kXyzToSrgb[r][2] * s[2];
  }
}

std::array<double, 3> RgbProjector::linear_rgb(std::span<const float> spectrum) const {
  require(spectrum.size() == weights_.size(), ErrorCode::kShapeMismatch, "spectrum length differs from axis");
  std::array<double, 3> rgb{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < spectrum.size(); ++i)
    for (int k = 0; k < 3; ++k) rgb[k] += weights_[i][k] * spectrum[i];
  return rgb;
}

RgbImage to_rgb(const HyperCube& cube) {
  const RgbProjector proj(cube.axis());
  RgbImage img(cube.height(), cube.width());
  std::vector<double> lin(img.data.size());
  double peak = 0.0;
  for (int y = 0; y < cube.height(); ++y)
    for (int x = 0; x < cube.width(); ++x) {
      const auto rgb = proj.linear_rgb(cube.pixel(y, x));
      for (int k = 0; k < 3; ++k) {
        const double v = std::max(0.0, rgb[k]);
        lin[(static_cast<std::size_t>(y) * cube.width() + x) * 3 + k] = v;
        peak = std::max(peak, v);
      }
    }
  for (std::size_t i = 0; i < lin.size(); ++i) img.data[i] = peak > 0.0 ? static_cast<float>(lin[i] / peak) : 0.0f;
  return img;
}

HyperCube rgb_as_cube(const RgbImage& image) {
  return HyperCube(image.height, image.width, WavelengthAxis({0.0, 1.0, 2.0}), image.data);
}

// ---------------------------------------------------------------------------
// PCA

std::vector<double> PcaProjection::project(std::span<const float> spectrum) const {
  require(static_cast<int>(spectrum.size()) == bands(), ErrorCode::kShapeMismatch,
          "PCA expects " + std::to_string(bands()) + " bands, got " + std::to_string(spectrum.size()));
  std::vector<double> out(components.size(), 0.0);
  for (std::size_t c = 0; c < components.size(); ++c) {
    double acc = 0.0;
    for (std::size_t j = 0; j < spectrum.size(); ++j) acc += components[c][j] * (spectrum[j] - mean[j]);
    out[c] = acc;
  }
  return out;
}

PcaProjection fit_pca(const SpectraMatrix& pixels, int k) {
  const int b = pixels.bands;
  const std::size_t n = pixels.rows();
  require(k >= 1, ErrorCode::kInvalidArgument, "PCA needs k >= 1");
  if (k > b) fail(ErrorCode::kInvalidArgument, "PCA k=" + std::to_string(k) + " exceeds band count " + std::to_string(b));
  if (n < 2 || n <= static_cast<std::size_t>(k))
    fail(ErrorCode::kInsufficientData, "PCA needs more than k pixel spectra, got " + std::to_string(n));

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(b);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = pixels.row(i);
    for (int j = 0; j < b; ++j) mean[j] += r[j];
  }
  mean /= static_cast<double>(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(b, b);
  Eigen::VectorXd d(b);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = pixels.row(i);
    for (int j = 0; j < b; ++j) d[j] = r[j] - mean[j];
    cov.selfadjointView<Eigen::Lower>().rankUpdate(d);
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  require(es.info() == Eigen::Success, ErrorCode::kNumerical, "PCA eigendecomposition failed");
  const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
  const double top = std::max(ev[b - 1], 0.0);
  const double tol = std::max(top, 1e-300) * b * 1e-12;
  int rank = 0;
  for (int j = 0; j < b; ++j) rank += ev[j] > tol ? 1 : 0;
  if (top <= 0.0 || rank < k)
    fail(ErrorCode::kInsufficientData, "PCA training pixels have rank " + std::to_string(rank) + " < k=" +
                                           std::to_string(k));

  PcaProjection p;
  p.mean.assign(mean.data(), mean.data() + b);
  p.total_variance = cov.trace();
  for (int c = 0; c < k; ++c) {
    const int col = b - 1 - c;
    Eigen::VectorXd v = es.eigenvectors().col(col);
    // sign convention: largest-magnitude coordinate positive
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    p.components.emplace_back(v.data(), v.data() + b);
    p.eigenvalues.push_back(ev[col]);
    p.explained_variance_ratio.push_back(std::clamp(ev[col] / p.total_variance, 0.0, 1.0));
  }
  return p;
}

HyperCube apply_pca(const PcaProjection& projection, const HyperCube& cube) {
  require(cube.bands() == projection.bands(), ErrorCode::kShapeMismatch,
          "PCA was fit on " + std::to_string(projection.bands()) + " bands, cube has " +
              std::to_string(cube.bands()));
  const int k = projection.k();
  std::vector<double> idx(k);
  std::iota(idx.begin(), idx.end(), 0.0);
  HyperCube out(cube.height(), cube.width(), WavelengthAxis(idx));
  for (int y = 0; y < cube.height(); ++y)
    for (int x = 0; x < cube.width(); ++x) {
      const auto z = projection.project(cube.pixel(y, x));
      auto dst = out.pixel(y, x);
      for (int c = 0; c < k; ++c) dst[c] = static_cast<float>(z[c]);
    }
  return out;
}

SpectraMatrix collect_fruit_pixels(std::span<const HyperCube> cubes, std::size_t max_pixels, std::uint64_t seed) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> where;
  int bands = 0;
  for (std::size_t c = 0; c < cubes.size(); ++c) {
    if (bands == 0) bands = cubes[c].bands();
    require(cubes[c].bands() == bands, ErrorCode::kShapeMismatch, "cubes have different band counts");
    for (std::size_t p = 0; p < cubes[c].pixel_count(); ++p) {
      const int y = static_cast<int>(p / cubes[c].width()), x = static_cast<int>(p % cubes[c].width());
      if (is_foreground(cubes[c].pixel(y, x)))
        where.emplace_back(static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(p));
    }
  }
  if (where.size() > max_pixels) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> picked;
    picked.reserve(max_pixels);
    std::mt19937_64 rng(seed);
    std::sample(where.begin(), where.end(), std::back_inserter(picked), max_pixels, rng);
    where.swap(picked);
  }
  SpectraMatrix m;
  m.bands = bands;
  m.data.reserve(where.size() * static_cast<std::size_t>(bands));
  for (const auto& [c, p] : where) {
    const int y = static_cast<int>(p / cubes[c].width()), x = static_cast<int>(p % cubes[c].width());
    m.append(cubes[c].pixel(y, x));
  }
  return m;
}

}  // namespace hsf
