#include "hsfruit/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "hsfruit/preprocess.hpp"

namespace hsf {

using json = nlohmann::json;

void CubeSet::add(HyperCube cube, int label, std::string id) {
  if (!cubes.empty())
    require(cube.same_shape(cubes.front()), ErrorCode::kShapeMismatch, "cube set members must share one shape");
  cubes.push_back(std::move(cube));
  labels.push_back(label);
  ids.push_back(std::move(id));
}

Tensor to_batch(std::span<const HyperCube* const> cubes) {
  require(!cubes.empty(), ErrorCode::kInvalidArgument, "empty batch");
  const int h = cubes[0]->height(), w = cubes[0]->width(), b = cubes[0]->bands();
  const int n = static_cast<int>(cubes.size());
  Tensor out({n, b, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i) {
    const HyperCube& c = *cubes[i];
    require(c.height() == h && c.width() == w && c.bands() == b, ErrorCode::kShapeMismatch,
            "batch members must share one shape");
    const float* src = c.data().data();
    float* dst = out.data() + static_cast<std::size_t>(i) * b * plane;
    for (std::size_t p = 0; p < plane; ++p)
      for (int k = 0; k < b; ++k) dst[k * plane + p] = src[p * b + k];
  }
  return out;
}

Tensor to_batch(const HyperCube& cube) {
  const HyperCube* p = &cube;
  return to_batch(std::span<const HyperCube* const>(&p, 1));
}

std::string to_string(LossKind k) { return k == LossKind::kFocal ? "focal" : "cross_entropy"; }

LossKind loss_from_string(const std::string& s) {
  if (s == "focal") return LossKind::kFocal;
  if (s == "cross_entropy" || s == "ce") return LossKind::kCrossEntropy;
  fail(ErrorCode::kInvalidArgument, "unknown loss '" + s + "' (expected focal or cross_entropy)");
}

namespace {

void check_distribution(std::span<const double> p, int target) {
  require(!p.empty(), ErrorCode::kInvalidArgument, "empty probability vector");
  require(target >= 0 && target < static_cast<int>(p.size()), ErrorCode::kOutOfRange, "target class out of range");
  double s = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, ErrorCode::kInvalidArgument, "probabilities must be finite and non-negative");
    s += v;
  }
  require(std::abs(s - 1.0) <= 1e-6, ErrorCode::kInvalidArgument, "probabilities do not sum to 1");
}

}  // namespace

double focal_loss(std::span<const double> p, int target, double gamma) {
  check_distribution(p, target);
  require(gamma >= 0.0, ErrorCode::kInvalidArgument, "focal gamma must be non-negative");
  const double pt = p[target];
  if (pt >= 1.0) return 0.0;
  if (gamma == 0.0) return -std::log(pt);
  return -std::pow(1.0 - pt, gamma) * std::log(pt);
}

double cross_entropy(std::span<const double> p, int target) {
  check_distribution(p, target);
  return -std::log(p[target]);
}

LossOutput loss_with_grad(const Tensor& logits, std::span<const int> targets, LossKind kind, double gamma) {
  require(logits.rank() == 2, ErrorCode::kShapeMismatch, "logits must be N x K");
  const int n = logits.dim(0), k = logits.dim(1);
  require(static_cast<int>(targets.size()) == n && n > 0, ErrorCode::kShapeMismatch, "one target per row required");
  require(gamma >= 0.0, ErrorCode::kInvalidArgument, "focal gamma must be non-negative");
  LossOutput out;
  out.grad = Tensor({n, k});
  out.probs.resize(n);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int t = targets[i];
    require(t >= 0 && t < k, ErrorCode::kOutOfRange, "target class out of range");
    const float* z = logits.data() + static_cast<std::size_t>(i) * k;
    double zmax = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) zmax = std::max(zmax, static_cast<double>(z[j]));
    double se = 0.0;
    for (int j = 0; j < k; ++j) se += std::exp(z[j] - zmax);
    const double lse = zmax + std::log(se);
    auto& p = out.probs[i];
    p.resize(k);
    for (int j = 0; j < k; ++j) p[j] = std::exp(z[j] - lse);
    const double logpt = z[t] - lse;
    const double pt = p[t];
    // d loss / d p_t, then chain through d p_t / d z_j = p_t (delta_tj - p_j)
    double loss, dl_dlogpt;
    if (kind == LossKind::kCrossEntropy || gamma == 0.0) {
      loss = -logpt;
      dl_dlogpt = -1.0;
    } else {
      const double q = 1.0 - pt;
      const double qg = std::pow(q, gamma);
      loss = -qg * logpt;
      // d/dlogpt of -(1-e^l)^g l = g (1-p)^(g-1) p l - (1-p)^g
      const double qg1 = q > 0.0 ? std::pow(q, gamma - 1.0) : 0.0;
      dl_dlogpt = gamma * qg1 * pt * logpt - qg;
    }
    total += loss;
    float* g = out.grad.data() + static_cast<std::size_t>(i) * k;
    for (int j = 0; j < k; ++j) g[j] = static_cast<float>(dl_dlogpt * ((j == t ? 1.0 : 0.0) - p[j]) / n);
  }
  out.loss = total / n;
  return out;
}

// ---------------------------------------------------------------------------
// config and reports

void TrainConfig::validate() const {
  require(batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  for (const auto& [prefix, f] : lr_scales)
    require(f >= 0.0, ErrorCode::kInvalidArgument, "lr_scales['" + prefix + "'] must be >= 0");
  require(early_stop_patience >= 1, ErrorCode::kInvalidArgument, "early_stop_patience must be >= 1");
  require(max_epochs >= 1, ErrorCode::kInvalidArgument, "max_epochs must be >= 1");
  require(focal_gamma >= 0.0, ErrorCode::kInvalidArgument, "focal_gamma must be >= 0");
  if (learning_rate) require(*learning_rate >= 0.0, ErrorCode::kInvalidArgument, "learning_rate must be >= 0");
  augmentation.validate();
}

namespace {

json aug_to_json(const AugmentationConfig& a) {
  return {{"rotation", a.rotation}, {"flip", a.flip},         {"noise", a.noise},     {"random_cut", a.random_cut},
          {"probability", a.probability}, {"noise_sigma", a.noise_sigma}, {"cut_min", a.cut_min},
          {"cut_max", a.cut_max},   {"seed", a.seed}};
}

AugmentationConfig aug_from_json(const json& j) {
  AugmentationConfig a;
  a.rotation = j.value("rotation", a.rotation);
  a.flip = j.value("flip", a.flip);
  a.noise = j.value("noise", a.noise);
  a.random_cut = j.value("random_cut", a.random_cut);
  a.probability = j.value("probability", a.probability);
  a.noise_sigma = j.value("noise_sigma", a.noise_sigma);
  a.cut_min = j.value("cut_min", a.cut_min);
  a.cut_max = j.value("cut_max", a.cut_max);
  a.seed = j.value("seed", a.seed);
  return a;
}

}  // namespace

std::string TrainConfig::to_json() const {
  json j;
  j["batch_size"] = batch_size;
  j["optimizer"] = hsf::to_string(optimizer);
  j["learning_rate"] = learning_rate ? json(*learning_rate) : json(default_learning_rate(optimizer));
  j["loss"] = hsf::to_string(loss);
  j["focal_gamma"] = focal_gamma;
  j["early_stop_patience"] = early_stop_patience;
  j["max_epochs"] = max_epochs;
  j["balanced_sampling"] = balanced_sampling;
  j["augment"] = augment;
  j["augmentation"] = aug_to_json(augmentation);
  j["seed"] = seed;
  j["frozen_prefixes"] = frozen_prefixes;
  j["lr_scales"] = lr_scales;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  TrainConfig c;
  try {
    const auto j = json::parse(text);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("optimizer")) c.optimizer = optimizer_from_string(j["optimizer"].get<std::string>());
    if (j.contains("learning_rate") && !j["learning_rate"].is_null()) c.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("loss")) c.loss = loss_from_string(j["loss"].get<std::string>());
    c.focal_gamma = j.value("focal_gamma", c.focal_gamma);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.balanced_sampling = j.value("balanced_sampling", c.balanced_sampling);
    c.augment = j.value("augment", c.augment);
    if (j.contains("augmentation")) c.augmentation = aug_from_json(j["augmentation"]);
    c.seed = j.value("seed", c.seed);
    c.frozen_prefixes = j.value("frozen_prefixes", c.frozen_prefixes);
    c.lr_scales = j.value("lr_scales", c.lr_scales);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad train config json: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainReport::to_json() const {
  json j;
  auto arr = json::array();
  for (const auto& e : epochs)
    arr.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"train_accuracy", e.train_accuracy},
                   {"val_loss", e.val_loss},
                   {"val_accuracy", e.val_accuracy}});
  j["epochs"] = arr;
  j["stopped_epoch"] = stopped_epoch;
  j["best_epoch"] = best_epoch;
  j["best_val_loss"] = best_val_loss;
  j["best_val_accuracy"] = best_val_accuracy;
  j["train_class_counts"] = train_class_counts;
  j["class_weights"] = class_weights;
  j["sampled_class_counts"] = sampled_class_counts;
  j["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  j["config_hash"] = config_hash;
  return j.dump(2);
}

std::string fnv1a64_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// training

namespace {

constexpr int kEvalChunk = 16;

int argmax_lower(const std::vector<double>& p) {
  int best = 0;
  for (int j = 1; j < static_cast<int>(p.size()); ++j)
    if (p[j] > p[best]) best = j;
  return best;
}

void check_set(const CubeSet& s, const char* what) {
  require(!s.empty(), ErrorCode::kInsufficientData, std::string(what) + " split is empty");
  require(s.labels.size() == s.cubes.size(), ErrorCode::kShapeMismatch, std::string(what) + " split has mismatched labels");
}

}  // namespace

std::pair<double, double> evaluate_loss(const ClassifierModel& model, const CubeSet& set, LossKind kind, double gamma) {
  check_set(set, "evaluation");
  double loss = 0.0;
  std::size_t hit = 0;
  for (std::size_t s = 0; s < set.size(); s += kEvalChunk) {
    const std::size_t e = std::min(set.size(), s + kEvalChunk);
    std::vector<const HyperCube*> ptr;
    for (std::size_t i = s; i < e; ++i) ptr.push_back(&set.cubes[i]);
    const Tensor logits = model.infer(to_batch(ptr));
    const auto out = loss_with_grad(logits, std::span<const int>(set.labels.data() + s, e - s), kind, gamma);
    loss += out.loss * static_cast<double>(e - s);
    for (std::size_t i = s; i < e; ++i) hit += argmax_lower(out.probs[i - s]) == set.labels[i];
  }
  return {loss / set.size(), static_cast<double>(hit) / set.size()};
}

TrainReport train(ClassifierModel& model, const CubeSet& train_set, const CubeSet& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  check_set(train_set, "training");
  check_set(val_set, "validation");
  const int k = model.config().n_classes;

  TrainReport rep;
  rep.config_json = cfg.to_json();
  rep.config_hash = fnv1a64_hex(json::parse(rep.config_json).dump() + model.config().to_json());
  rep.train_class_counts.assign(k, 0);
  for (int c : train_set.labels) {
    require(c >= 0 && c < k, ErrorCode::kOutOfRange, "training label out of range");
    ++rep.train_class_counts[c];
  }
  rep.sampled_class_counts.assign(k, 0);

  std::vector<double> weights;
  if (cfg.balanced_sampling) {
    weights = balance(train_set.labels, k);
    rep.class_weights.assign(k, 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) rep.class_weights[train_set.labels[i]] = weights[i];
  }

  AugmentationConfig aug = cfg.augmentation;
  if (cfg.augment && aug.noise && aug.reference_std.empty()) aug.reference_std = band_reference_std(train_set.cubes);

  OptimizerOptions oo;
  oo.kind = cfg.optimizer;
  std::vector<nn::NamedParam> trainable;
  for (auto& p : model.parameters()) {
    bool frozen = false;
    for (const auto& pre : cfg.frozen_prefixes) frozen = frozen || p.name.rfind(pre, 0) == 0;
    if (!frozen) trainable.push_back(p);
  }
  Optimizer opt(std::move(trainable), oo);
  if (cfg.learning_rate) opt.set_learning_rate(*cfg.learning_rate);
  for (const auto& [prefix, f] : cfg.lr_scales) opt.scale_learning_rate(prefix, f);

  std::mt19937_64 rng(cfg.seed);
  AugmentRng aug_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  const std::size_t n = train_set.size();
  std::discrete_distribution<std::size_t> sampler(weights.begin(), weights.end());

  ClassifierModel best = model;
  rep.best_val_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    if (cfg.balanced_sampling) {
      for (auto& i : order) i = sampler(rng);
    } else {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
    }
    double loss_sum = 0.0;
    std::size_t hit = 0;
    for (std::size_t s = 0; s < n; s += cfg.batch_size) {
      const std::size_t e = std::min(n, s + static_cast<std::size_t>(cfg.batch_size));
      std::vector<HyperCube> views;
      std::vector<const HyperCube*> ptr;
      std::vector<int> targets;
      views.reserve(e - s);
      for (std::size_t i = s; i < e; ++i) {
        const std::size_t r = order[i];
        ++rep.sampled_class_counts[train_set.labels[r]];
        targets.push_back(train_set.labels[r]);
        if (cfg.augment && aug.any()) {
          views.push_back(augment(train_set.cubes[r], aug, aug_rng));
          ptr.push_back(&views.back());
        } else {
          ptr.push_back(&train_set.cubes[r]);
        }
      }
      const Tensor logits = model.forward(to_batch(ptr), true);
      auto out = loss_with_grad(logits, targets, cfg.loss, cfg.focal_gamma);
      if (!std::isfinite(out.loss))
        fail(ErrorCode::kNumerical, "non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                        std::to_string(s) + " (learning rate " + std::to_string(opt.learning_rate()) + ")");
      opt.zero_grad();
      model.backward(out.grad);
      opt.step();
      loss_sum += out.loss * static_cast<double>(e - s);
      for (std::size_t i = 0; i < targets.size(); ++i) hit += argmax_lower(out.probs[i]) == targets[i];
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / n;
    st.train_accuracy = static_cast<double>(hit) / n;
    std::tie(st.val_loss, st.val_accuracy) = evaluate_loss(model, val_set, cfg.loss, cfg.focal_gamma);
    require(std::isfinite(st.val_loss), ErrorCode::kNumerical,
            "non-finite validation loss at epoch " + std::to_string(epoch));
    rep.epochs.push_back(st);
    rep.stopped_epoch = epoch;
    if (on_epoch) on_epoch(st);
    if (st.val_loss < rep.best_val_loss) {
      rep.best_val_loss = st.val_loss;
      rep.best_val_accuracy = st.val_accuracy;
      rep.best_epoch = epoch;
      best.load_state_from(model);
      since_best = 0;
    } else if (++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  model.load_state_from(best);
  return rep;
}

// ---------------------------------------------------------------------------
// evaluation

EvalReport EvalReport::from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted, int k) {
  require(truth.size() == predicted.size(), ErrorCode::kShapeMismatch, "truth and predictions differ in length");
  EvalReport r;
  r.n_classes = k;
  r.confusion.assign(k, std::vector<long>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    require(truth[i] >= 0 && truth[i] < k && predicted[i] >= 0 && predicted[i] < k, ErrorCode::kOutOfRange,
            "class index out of range");
    ++r.confusion[truth[i]][predicted[i]];
  }
  long trace = 0, total = 0;
  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  for (int i = 0; i < k; ++i) {
    long row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += r.confusion[i][j];
      col += r.confusion[j][i];
      total += r.confusion[i][j];
    }
    trace += r.confusion[i][i];
    r.recall[i] = row > 0 ? static_cast<double>(r.confusion[i][i]) / row : 0.0;
    r.precision[i] = col > 0 ? static_cast<double>(r.confusion[i][i]) / col : 0.0;
  }
  r.accuracy = total > 0 ? static_cast<double>(trace) / total : 0.0;
  r.predictions = predicted;
  return r;
}

std::string EvalReport::to_json() const {
  json j;
  j["accuracy"] = accuracy;
  j["n_classes"] = n_classes;
  j["confusion"] = confusion;
  j["precision"] = precision;
  j["recall"] = recall;
  j["tta_views"] = tta_views;
  j["predictions"] = predictions;
  j["probabilities"] = probabilities;
  j["config_hash"] = config_hash;
  return j.dump(2);
}

std::vector<std::vector<double>> predict_probabilities(const ClassifierModel& model, const CubeSet& set) {
  std::vector<std::vector<double>> out;
  out.reserve(set.size());
  for (std::size_t s = 0; s < set.size(); s += kEvalChunk) {
    const std::size_t e = std::min(set.size(), s + kEvalChunk);
    std::vector<const HyperCube*> ptr;
    for (std::size_t i = s; i < e; ++i) ptr.push_back(&set.cubes[i]);
    auto p = nn::softmax_rows(model.infer(to_batch(ptr)));
    for (auto& row : p) out.push_back(std::move(row));
  }
  return out;
}

EvalReport evaluate(const ClassifierModel& model, const CubeSet& set) {
  check_set(set, "test");
  const auto probs = predict_probabilities(model, set);
  std::vector<int> pred;
  for (const auto& p : probs) pred.push_back(argmax_lower(p));
  auto r = EvalReport::from_predictions(set.labels, pred, model.config().n_classes);
  r.probabilities = probs;
  r.tta_views = 1;
  return r;
}

HyperCube dihedral_view(const HyperCube& cube, int index) {
  switch (index) {
    case 0: return cube;
    case 1: return rotate90(cube, 1);
    case 2: return rotate90(cube, 2);
    case 3: return rotate90(cube, 3);
    case 4: return flip_horizontal(cube);
    case 5: return flip_vertical(cube);
    case 6: return flip_horizontal(rotate90(cube, 1));
    case 7: return flip_vertical(rotate90(cube, 1));
    default: fail(ErrorCode::kOutOfRange, "dihedral view index must be 0..7");
  }
}

EvalReport evaluate_tta(const ClassifierModel& model, const CubeSet& set, int views, const AugmentationConfig& aug_in) {
  require(views >= 1, ErrorCode::kInvalidArgument, "TTA needs at least one view");
  check_set(set, "test");
  const int k = model.config().n_classes;
  AugmentationConfig aug = aug_in;
  if (views > 8) {
    aug.validate();
    if (aug.noise && aug.reference_std.empty()) aug.reference_std = band_reference_std(set.cubes);
  }
  AugmentRng rng(aug.seed);
  auto sum = predict_probabilities(model, set);  // view 1: identity
  for (int v = 1; v < views; ++v) {
    CubeSet view;
    view.labels = set.labels;
    view.cubes.reserve(set.size());
    for (const auto& c : set.cubes) view.cubes.push_back(v < 8 ? dihedral_view(c, v) : augment(c, aug, rng));
    const auto p = predict_probabilities(model, view);
    for (std::size_t i = 0; i < sum.size(); ++i)
      for (int j = 0; j < k; ++j) sum[i][j] += p[i][j];
  }
  std::vector<int> pred;
  for (auto& p : sum) {
    for (double& v : p) v /= views;
    pred.push_back(argmax_lower(p));
  }
  auto r = EvalReport::from_predictions(set.labels, pred, k);
  r.probabilities = std::move(sum);
  r.tta_views = views;
  return r;
}

// ---------------------------------------------------------------------------
// reductions

std::string to_string(Reduction r) {
  switch (r) {
    case Reduction::kFull: return "full";
    case Reduction::kRgb: return "rgb";
    case Reduction::kPca5: return "pca5";
  }
  return "?";
}

Reduction reduction_from_string(const std::string& s) {
  if (s == "full") return Reduction::kFull;
  if (s == "rgb") return Reduction::kRgb;
  if (s == "pca5" || s == "pca") return Reduction::kPca5;
  fail(ErrorCode::kInvalidArgument, "unknown reduction '" + s + "' (expected full, rgb or pca5)");
}

PcaProjection fit_reduction_pca(const CubeSet& train_set, std::uint64_t seed) {
  return fit_pca(collect_fruit_pixels(train_set.cubes, 200000, seed), 5);
}

HyperCube reduce_cube(Reduction r, const PcaProjection* pca, const HyperCube& c) {
  if (r == Reduction::kFull) return c;
  if (r == Reduction::kRgb) return rgb_as_cube(to_rgb(c));
  require(pca != nullptr, ErrorCode::kInvalidArgument, "pca5 reduction needs a fitted projection");
  HyperCube z = apply_pca(*pca, c);
  for (int y = 0; y < c.height(); ++y)
    for (int x = 0; x < c.width(); ++x)
      if (!is_foreground(c.pixel(y, x)))
        for (auto& v : z.pixel(y, x)) v = 0.0f;
  return z;
}

void apply_reduction(Reduction r, CubeSet& train_set, CubeSet& val_set, CubeSet& test_set, std::uint64_t seed) {
  if (r == Reduction::kFull) return;
  PcaProjection pca;
  if (r == Reduction::kPca5) pca = fit_reduction_pca(train_set, seed);
  for (CubeSet* s : {&train_set, &val_set, &test_set})
    for (auto& c : s->cubes) c = reduce_cube(r, &pca, c);
}

// ---------------------------------------------------------------------------
// grid

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

FeatureMatrix features_of(const CubeSet& s) {
  FeatureMatrix f;
  f.reserve(s.size());
  for (const auto& c : s.cubes) f.push_back(extract_shallow_features(c));
  return f;
}

double shallow_accuracy(const ShallowModel& m, const CubeSet& test) {
  const auto pred = m.predict(features_of(test));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == test.labels[i];
  return static_cast<double>(hit) / test.size();
}

ClassifierModel build_named(const std::string& name, const ModelConfig& base, int in_bands, int input_size,
                            std::uint64_t seed) {
  ModelConfig cfg = base;
  cfg.architecture = architecture_from_string(name);
  cfg.in_bands = in_bands;
  cfg.seed = seed;
  if (cfg.architecture == Architecture::kHsCnn && base.in_bands != in_bands) cfg.widths.clear();
  cfg.input_size = input_size;
  return build_model(cfg);
}

}  // namespace

std::string BenchmarkTable::to_csv() const {
  std::ostringstream os;
  os << "model,reduction,category,camera,present,accuracy,seeds,accuracies,hyperparameters,absent_reason\n";
  for (const auto& c : cells) {
    std::string seeds, accs;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(c.seeds[i]);
    for (std::size_t i = 0; i < c.accuracies.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", c.accuracies[i]);
      accs += (i ? ";" : "") + std::string(buf);
    }
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.6f", c.accuracy);
    os << csv_escape(c.model) << ',' << c.reduction << ',' << csv_escape(c.category) << ',' << csv_escape(c.camera)
       << ',' << (c.present ? 1 : 0) << ',' << (c.present ? acc : "") << ',' << seeds << ',' << accs << ','
       << csv_escape(c.hyperparameters) << ',' << csv_escape(c.absent_reason) << '\n';
  }
  return os.str();
}

std::string BenchmarkTable::to_json() const {
  auto arr = json::array();
  for (const auto& c : cells)
    arr.push_back({{"model", c.model},
                   {"reduction", c.reduction},
                   {"category", c.category},
                   {"camera", c.camera},
                   {"present", c.present},
                   {"absent_reason", c.absent_reason},
                   {"seeds", c.seeds},
                   {"accuracies", c.accuracies},
                   {"accuracy", c.accuracy},
                   {"hyperparameters", c.hyperparameters.empty() ? json::object() : json::parse(c.hyperparameters)}});
  return json{{"cells", arr}}.dump(2);
}

BenchmarkTable run_benchmark_grid(const std::vector<GridTask>& tasks, const GridOptions& opt, const GridLog& log) {
  BenchmarkTable table;
  if (opt.models.empty()) return table;
  require(!opt.seeds.empty(), ErrorCode::kInvalidArgument, "grid needs at least one seed");
  for (const auto& task : tasks)
    for (Reduction red : opt.reductions) {
      // reduce once per (task, reduction); the same inputs are shared by every model
      CubeSet tr = task.train, va = task.val, te = task.test;
      std::string reduce_error;
      if (tr.empty() || te.empty()) {
        reduce_error = "missing labelled data";
      } else {
        try {
          apply_reduction(red, tr, va, te, opt.seeds.front());
        } catch (const Error& e) {
          reduce_error = e.what();
        }
      }
      for (const auto& name : opt.models) {
        GridCell cell;
        cell.model = name;
        cell.reduction = to_string(red);
        cell.category = task.category;
        cell.camera = task.camera;
        cell.seeds = opt.seeds;
        if (!reduce_error.empty()) {
          cell.absent_reason = reduce_error;
          table.cells.push_back(cell);
          if (log) log(name + "/" + cell.reduction + "/" + task.category + "/" + task.camera + ": absent (" + reduce_error + ")");
          continue;
        }
        try {
          json hp = json::object();
          auto hp_seeds = json::array();
          for (std::uint64_t seed : opt.seeds) {
            if (name == "svm" || name == "knn") {
              // hyperparameter by cross validation on the training split only
              const FeatureMatrix fx = features_of(tr);
              const std::vector<int>& fy = tr.labels;
              const auto m = name == "svm" ? fit_svm(fx, fy, {0.1, 1, 10, 100, 1000}, 5, seed)
                                           : fit_knn(fx, fy, {1, 3, 5, 7, 9}, 5, seed);
              cell.accuracies.push_back(shallow_accuracy(m, te));
              hp_seeds.push_back({{"seed", seed}, {name == "svm" ? "C" : "k", m.hyperparameter}, {"cv_accuracy", m.cv_accuracy}});
            } else {
              require(!va.empty(), ErrorCode::kInsufficientData, "validation split is empty");
              auto model = build_named(name, opt.hscnn, tr.cubes.front().bands(), tr.cubes.front().height(), seed);
              TrainConfig tc = opt.train;
              tc.seed = seed;
              const auto rep = train(model, tr, va, tc);
              const auto ev = evaluate_tta(model, te, opt.tta_views, tc.augmentation);
              cell.accuracies.push_back(ev.accuracy);
              hp_seeds.push_back({{"seed", seed},
                                  {"best_epoch", rep.best_epoch},
                                  {"stopped_epoch", rep.stopped_epoch},
                                  {"param_count", model.param_count()},
                                  {"config_hash", rep.config_hash}});
            }
          }
          hp["runs"] = hp_seeds;
          cell.hyperparameters = hp.dump();
          cell.accuracy = std::accumulate(cell.accuracies.begin(), cell.accuracies.end(), 0.0) / cell.accuracies.size();
          cell.present = true;
        } catch (const Error& e) {
          cell.present = false;
          cell.absent_reason = e.what();
          cell.accuracies.clear();
        }
        if (log) {
          char buf[64];
          std::snprintf(buf, sizeof buf, "%.4f", cell.accuracy);
          log(name + "/" + cell.reduction + "/" + task.category + "/" + task.camera + ": " +
              (cell.present ? std::string(buf) : "absent (" + cell.absent_reason + ")"));
        }
        table.cells.push_back(std::move(cell));
      }
    }
  return table;
}

// ---------------------------------------------------------------------------
// ablation

std::vector<std::string> ablation_values(const std::string& axis) {
  if (axis == "pooling") return {"average", "max"};
  if (axis == "head") return {"gap_plus_linear", "gap_only", "fully_connected"};
  if (axis == "conv_type") return {"separable", "normal"};
  if (axis == "loss") return {"focal", "cross_entropy"};
  if (axis == "optimizer") return {"sgd", "adam", "adabound_default", "adabound_lr01"};
  if (axis == "rotation" || axis == "flip" || axis == "noise" || axis == "random_cut") return {"on", "off"};
  fail(ErrorCode::kInvalidArgument, "unknown ablation axis '" + axis +
                                        "' (pooling, head, conv_type, loss, optimizer, rotation, flip, noise, random_cut)");
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "axis,value,mean_accuracy";
  for (auto s : seeds) os << ",seed_" << s;
  os << '\n';
  for (const auto& r : rows) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", r.mean_accuracy);
    os << axis << ',' << r.value << ',' << buf;
    for (double a : r.accuracies) {
      std::snprintf(buf, sizeof buf, "%.6f", a);
      os << ',' << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string AblationTable::to_json() const {
  auto arr = json::array();
  for (const auto& r : rows) arr.push_back({{"value", r.value}, {"accuracies", r.accuracies}, {"mean_accuracy", r.mean_accuracy}});
  return json{{"axis", axis}, {"seeds", seeds}, {"rows", arr}}.dump(2);
}

AblationTable run_ablation(const std::string& axis, const CubeSet& train_set, const CubeSet& val_set,
                           const CubeSet& test_set, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                           const std::vector<std::uint64_t>& seeds, int tta_views, const GridLog& log) {
  require(!seeds.empty(), ErrorCode::kInvalidArgument, "ablation needs at least one seed");
  AblationTable table;
  table.axis = axis;
  table.seeds = seeds;
  for (const auto& value : ablation_values(axis)) {
    ModelConfig mc = model_cfg;
    mc.architecture = Architecture::kHsCnn;
    mc.in_bands = train_set.cubes.empty() ? mc.in_bands : train_set.cubes.front().bands();
    TrainConfig tc = train_cfg;
    if (axis == "pooling") mc.pooling = pooling_from_string(value);
    else if (axis == "head") mc.head = head_from_string(value);
    else if (axis == "conv_type") mc.conv_type = conv_type_from_string(value);
    else if (axis == "loss") tc.loss = loss_from_string(value);
    else if (axis == "optimizer") tc.optimizer = optimizer_from_string(value), tc.learning_rate.reset();
    else {
      const bool on = value == "on";
      if (axis == "rotation") tc.augmentation.rotation = on;
      if (axis == "flip") tc.augmentation.flip = on;
      if (axis == "noise") tc.augmentation.noise = on;
      if (axis == "random_cut") tc.augmentation.random_cut = on;
    }
    if (mc.head == HeadType::kFullyConnected && !train_set.cubes.empty()) mc.input_size = train_set.cubes.front().height();
    AblationRow row;
    row.value = value;
    for (std::uint64_t seed : seeds) {
      mc.seed = seed;
      tc.seed = seed;
      auto model = build_hscnn(mc);
      (void)train(model, train_set, val_set, tc);
      const auto ev = evaluate_tta(model, test_set, tta_views, tc.augmentation);
      row.accuracies.push_back(ev.accuracy);
      if (log) log(axis + "=" + value + " seed " + std::to_string(seed) + ": " + std::to_string(ev.accuracy));
    }
    row.mean_accuracy = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) / row.accuracies.size();
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace hsf
