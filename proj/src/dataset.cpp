#include "hsfruit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "hsfruit/error.hpp"
#include "hsfruit/preprocess.hpp"
#include "json.hpp"

namespace hsf {

using nlohmann::json;

std::string to_string(Fruit f) { return f == Fruit::kAvocado ? "avocado" : "kiwi"; }
std::string to_string(Side s) { return s == Side::kFront ? "front" : "back"; }
std::string to_string(Category c) {
  switch (c) {
    case Category::kFirmness: return "firmness";
    case Category::kSweetness: return "sweetness";
    case Category::kRipeness: return "ripeness";
  }
  return "?";
}
std::string to_string(Subset s) {
  switch (s) {
    case Subset::kTrain: return "train";
    case Subset::kVal: return "val";
    case Subset::kTest: return "test";
  }
  return "?";
}

Fruit fruit_from_string(const std::string& s) {
  if (s == "avocado") return Fruit::kAvocado;
  if (s == "kiwi") return Fruit::kKiwi;
  fail(ErrorCode::kInvalidArgument, "unknown fruit '" + s + "'");
}
Side side_from_string(const std::string& s) {
  if (s == "front") return Side::kFront;
  if (s == "back") return Side::kBack;
  fail(ErrorCode::kInvalidArgument, "unknown side '" + s + "'");
}
Category category_from_string(const std::string& s) {
  if (s == "firmness") return Category::kFirmness;
  if (s == "sweetness") return Category::kSweetness;
  if (s == "ripeness") return Category::kRipeness;
  fail(ErrorCode::kInvalidArgument, "unknown category '" + s + "'");
}
Subset subset_from_string(const std::string& s) {
  if (s == "train") return Subset::kTrain;
  if (s == "val") return Subset::kVal;
  if (s == "test") return Subset::kTest;
  fail(ErrorCode::kInvalidArgument, "unknown subset '" + s + "'");
}

std::string class_name(Category category, int class_index) {
  static const char* names[3][3] = {{"too hard", "perfect", "too soft"},
                                    {"not sweet", "perfect", "too sweet"},
                                    {"unripe", "perfect", "overripe"}};
  require(class_index >= 0 && class_index < kNumClasses, ErrorCode::kOutOfRange, "class index out of range");
  return names[static_cast<int>(category)][class_index];
}

void LabelRecord::validate() const {
  require(!recording_id.empty(), ErrorCode::kInvalidArgument, "record without recording_id");
  if (sugar_brix && fruit != Fruit::kKiwi)
    fail(ErrorCode::kInvalidArgument, "record " + recording_id + ": sugar content is only defined for kiwi");
  if (firmness_g_cm2) require(*firmness_g_cm2 > 0, ErrorCode::kInvalidArgument, "record " + recording_id + ": firmness must be positive");
  if (sugar_brix) require(*sugar_brix >= 0, ErrorCode::kInvalidArgument, "record " + recording_id + ": negative brix");
  if (ripeness_state)
    require(*ripeness_state >= 0 && *ripeness_state < kNumClasses, ErrorCode::kInvalidArgument,
            "record " + recording_id + ": ripeness state out of range");
  require(series == 1 || series == 2, ErrorCode::kInvalidArgument, "record " + recording_id + ": series must be 1 or 2");
}

ClassLabel assign_firmness_class(Fruit fruit, double firmness) {
  if (!(firmness > 0.0)) fail(ErrorCode::kInvalidArgument, "firmness must be positive");
  const double hard = fruit == Fruit::kAvocado ? 1200.0 : 1500.0;
  const double soft = fruit == Fruit::kAvocado ? 900.0 : 1000.0;
  return {Category::kFirmness, firmness > hard ? 0 : firmness < soft ? 2 : 1};
}

ClassLabel assign_sweetness_class(Fruit fruit, double brix) {
  if (fruit != Fruit::kKiwi) fail(ErrorCode::kInvalidArgument, "sweetness classes are only defined for kiwi");
  if (!(brix >= 0.0)) fail(ErrorCode::kInvalidArgument, "brix must be non-negative");
  return {Category::kSweetness, brix < 15.5 ? 0 : brix > 17.0 ? 2 : 1};
}

ClassLabel assign_ripeness_class(int state) {
  require(state >= 0 && state < kNumClasses, ErrorCode::kInvalidArgument, "ripeness state out of range");
  return {Category::kRipeness, state};
}

std::optional<ClassLabel> label_for(const LabelRecord& r, Category category) {
  switch (category) {
    case Category::kFirmness:
      if (r.firmness_g_cm2) return assign_firmness_class(r.fruit, *r.firmness_g_cm2);
      break;
    case Category::kSweetness:
      if (r.sugar_brix && r.fruit == Fruit::kKiwi) return assign_sweetness_class(r.fruit, *r.sugar_brix);
      break;
    case Category::kRipeness:
      if (r.ripeness_state) return assign_ripeness_class(*r.ripeness_state);
      break;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// manifest

namespace {

const char* kColumns[] = {"recording_id", "fruit",     "camera",     "day",            "series", "side",
                          "fruit_id",     "firmness_g_cm2", "sugar_brix", "ripeness_state", "path"};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

LabelRecord record_from_fields(const std::map<std::string, std::string>& f, const std::string& where) {
  auto get = [&](const char* k) -> std::string {
    auto it = f.find(k);
    return it == f.end() ? std::string() : it->second;
  };
  auto num = [&](const char* k) -> std::optional<double> {
    const std::string s = get(k);
    if (s.empty()) return std::nullopt;
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      fail(ErrorCode::kFormat, where + ": column '" + k + "' is not a number: " + s);
    }
  };
  LabelRecord r;
  r.recording_id = get("recording_id");
  require(!r.recording_id.empty(), ErrorCode::kFormat, where + ": missing recording_id");
  r.fruit = fruit_from_string(get("fruit"));
  if (!get("camera").empty()) r.camera = get("camera");
  if (auto v = num("day")) r.day = static_cast<int>(*v);
  if (auto v = num("series")) r.series = static_cast<int>(*v);
  if (!get("side").empty()) r.side = side_from_string(get("side"));
  r.fruit_id = get("fruit_id");
  r.firmness_g_cm2 = num("firmness_g_cm2");
  r.sugar_brix = num("sugar_brix");
  const std::string rs = get("ripeness_state");
  if (rs == "unripe") r.ripeness_state = 0;
  else if (rs == "perfect") r.ripeness_state = 1;
  else if (rs == "overripe") r.ripeness_state = 2;
  else if (!rs.empty()) r.ripeness_state = static_cast<int>(*num("ripeness_state"));
  r.path = get("path");
  r.validate();
  return r;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string manifest_csv(const std::vector<LabelRecord>& records) {
  std::ostringstream os;
  for (std::size_t i = 0; i < std::size(kColumns); ++i) os << (i ? "," : "") << kColumns[i];
  os << '\n';
  for (const auto& r : records) {
    os << r.recording_id << ',' << to_string(r.fruit) << ',' << r.camera << ',' << r.day << ',' << r.series << ','
       << to_string(r.side) << ',' << r.fruit_id << ',' << (r.firmness_g_cm2 ? fmt_double(*r.firmness_g_cm2) : "")
       << ',' << (r.sugar_brix ? fmt_double(*r.sugar_brix) : "") << ','
       << (r.ripeness_state ? class_name(Category::kRipeness, *r.ripeness_state) : "") << ',' << r.path << '\n';
  }
  return os.str();
}

void save_manifest(const std::vector<LabelRecord>& records, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  if (path.extension() == ".json") {
    json arr = json::array();
    for (const auto& r : records) {
      json j;
      j["recording_id"] = r.recording_id;
      j["fruit"] = to_string(r.fruit);
      j["camera"] = r.camera;
      j["day"] = r.day;
      j["series"] = r.series;
      j["side"] = to_string(r.side);
      j["fruit_id"] = r.fruit_id;
      j["firmness_g_cm2"] = r.firmness_g_cm2 ? json(*r.firmness_g_cm2) : json(nullptr);
      j["sugar_brix"] = r.sugar_brix ? json(*r.sugar_brix) : json(nullptr);
      j["ripeness_state"] =
          r.ripeness_state ? json(class_name(Category::kRipeness, *r.ripeness_state)) : json(nullptr);
      j["path"] = r.path;
      arr.push_back(j);
    }
    out << arr.dump(2) << '\n';
  } else {
    out << manifest_csv(records);
  }
}

std::vector<LabelRecord> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest " + path.string());
  std::vector<LabelRecord> out;
  std::set<std::string> seen;
  auto add = [&](LabelRecord r) {
    if (!seen.insert(r.recording_id).second)
      fail(ErrorCode::kFormat, "duplicate recording_id '" + r.recording_id + "' in " + path.string());
    out.push_back(std::move(r));
  };
  if (path.extension() == ".json") {
    json arr;
    try {
      arr = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorCode::kFormat, "manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    require(arr.is_array(), ErrorCode::kFormat, "JSON manifest must be an array of records");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      std::map<std::string, std::string> f;
      for (auto it = arr[i].begin(); it != arr[i].end(); ++it) {
        if (it->is_null()) continue;
        f[it.key()] = it->is_string() ? it->get<std::string>() : it->dump();
      }
      add(record_from_fields(f, path.string() + " record " + std::to_string(i)));
    }
    return out;
  }
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kFormat, "manifest " + path.string() + " is empty");
  const auto header = split_csv_line(line);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      fail(ErrorCode::kFormat, path.string() + ":" + std::to_string(lineno) + ": expected " +
                                   std::to_string(header.size()) + " columns, got " + std::to_string(cells.size()));
    std::map<std::string, std::string> f;
    for (std::size_t i = 0; i < header.size(); ++i) f[header[i]] = cells[i];
    add(record_from_fields(f, path.string() + ":" + std::to_string(lineno)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// split

std::array<int, 3> apportion(int n, const SplitRatios& r) {
  const double total = r.train + r.val + r.test;
  require(total > 0 && r.train >= 0 && r.val >= 0 && r.test >= 0, ErrorCode::kInvalidArgument, "invalid split ratios");
  const double q[3] = {n * r.train / total, n * r.val / total, n * r.test / total};
  std::array<int, 3> out{};
  int used = 0;
  for (int s = 0; s < 3; ++s) used += out[s] = static_cast<int>(std::floor(q[s] + 1e-12));
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return q[a] - out[a] > q[b] - out[b] + 1e-12; });
  for (int i = 0; used < n; ++i, ++used) ++out[order[i % 3]];
  return out;
}

std::vector<std::string> SplitAssignment::ids(Subset s) const {
  std::vector<std::string> out;
  for (const auto& [id, sub] : subset)
    if (sub == s) out.push_back(id);
  return out;
}

std::size_t SplitAssignment::count(Subset s) const {
  return static_cast<std::size_t>(std::count_if(subset.begin(), subset.end(), [s](const auto& kv) { return kv.second == s; }));
}

std::string SplitAssignment::to_json() const {
  json j;
  j["seed"] = seed;
  j["category"] = to_string(category);
  json m = json::object();
  for (const auto& [id, sub] : subset) m[id] = to_string(sub);
  j["assignment"] = m;
  return j.dump(2);
}

SplitAssignment SplitAssignment::from_json(const std::string& text) {
  SplitAssignment a;
  try {
    const json j = json::parse(text);
    a.seed = j.at("seed").get<std::uint64_t>();
    a.category = category_from_string(j.at("category").get<std::string>());
    for (auto it = j.at("assignment").begin(); it != j.at("assignment").end(); ++it)
      a.subset[it.key()] = subset_from_string(it->get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("malformed split file: ") + e.what());
  }
  return a;
}

namespace {

// Per-class targets: floors of the exact quotas plus one extra unit for some subsets, chosen so
// that the column totals equal the apportionment of the whole set. Among feasible choices the one
// using the largest remainders wins; without a feasible choice each class is apportioned alone.
std::vector<std::array<int, 3>> class_targets(const std::vector<int>& n, const SplitRatios& r) {
  const int k = static_cast<int>(n.size());
  const double total = r.train + r.val + r.test;
  const double ratio[3] = {r.train / total, r.val / total, r.test / total};
  std::vector<std::array<int, 3>> base(k);
  std::vector<std::array<double, 3>> rem(k);
  std::vector<int> extra(k);
  int n_all = 0;
  for (int c = 0; c < k; ++c) {
    int used = 0;
    for (int s = 0; s < 3; ++s) {
      const double q = n[c] * ratio[s];
      base[c][s] = static_cast<int>(std::floor(q + 1e-12));
      rem[c][s] = q - base[c][s];
      used += base[c][s];
    }
    extra[c] = n[c] - used;
    n_all += n[c];
  }
  const auto want = apportion(n_all, r);

  std::vector<std::vector<std::array<int, 3>>> options(k);
  for (int c = 0; c < k; ++c)
    for (int m = 0; m < 8; ++m) {
      std::array<int, 3> x{m & 1, (m >> 1) & 1, (m >> 2) & 1};
      if (x[0] + x[1] + x[2] == extra[c]) options[c].push_back(x);
    }
  std::vector<std::size_t> pick(k, 0), best;
  double best_score = -1.0;
  while (true) {
    std::array<int, 3> tot{};
    double score = 0.0;
    for (int c = 0; c < k; ++c)
      for (int s = 0; s < 3; ++s) {
        tot[s] += base[c][s] + options[c][pick[c]][s];
        score += options[c][pick[c]][s] * rem[c][s];
      }
    if (tot == want && score > best_score + 1e-12) {
      best_score = score;
      best = pick;
    }
    int c = 0;
    while (c < k && ++pick[c] == options[c].size()) pick[c++] = 0;
    if (c == k) break;
  }
  std::vector<std::array<int, 3>> out(k);
  for (int c = 0; c < k; ++c) {
    if (best.empty()) {
      out[c] = apportion(n[c], r);
    } else {
      for (int s = 0; s < 3; ++s) out[c][s] = base[c][s] + options[c][best[c]][s];
    }
  }
  return out;
}

}  // namespace

SplitAssignment split(const std::vector<LabelRecord>& records, Category category, std::uint64_t seed,
                      const SplitRatios& ratios) {
  // class -> fruit group -> record ids (ordered maps keep the result independent of record order)
  std::map<int, std::map<std::string, std::vector<std::string>>> groups;
  std::map<std::string, int> group_class;
  for (const auto& r : records) {
    const auto label = label_for(r, category);
    if (!label) continue;
    auto [it, fresh] = group_class.emplace(r.group(), label->class_index);
    if (!fresh && it->second != label->class_index)
      fail(ErrorCode::kInvalidArgument, "fruit '" + r.group() + "' has records in different " + to_string(category) +
                                            " classes");
    groups[label->class_index][r.group()].push_back(r.recording_id);
  }
  require(!groups.empty(), ErrorCode::kInsufficientData, "no record carries a " + to_string(category) + " label");
  for (const auto& [cls, g] : groups)
    if (g.size() < 3)
      fail(ErrorCode::kInsufficientData, "class '" + class_name(category, cls) + "' has only " +
                                             std::to_string(g.size()) + " fruit(s); at least 3 are needed to split");

  std::vector<int> classes, sizes;
  for (const auto& [cls, g] : groups) {
    classes.push_back(cls);
    int n = 0;
    for (const auto& [gid, ids] : g) n += static_cast<int>(ids.size());
    sizes.push_back(n);
  }
  const auto targets = class_targets(sizes, ratios);

  SplitAssignment out;
  out.seed = seed;
  out.category = category;
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    const auto& g = groups[classes[ci]];
    std::vector<const std::vector<std::string>*> fruits;
    for (const auto& [gid, ids] : g) fruits.push_back(&ids);
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(classes[ci]) + 1);
    std::shuffle(fruits.begin(), fruits.end(), rng);
    std::stable_sort(fruits.begin(), fruits.end(), [](auto* a, auto* b) { return a->size() > b->size(); });
    // Greedy fill towards the integer targets; with multi-record fruits also try the exact
    // quotas and keep whichever lands closer to them.
    const double total = ratios.train + ratios.val + ratios.test;
    const std::array<double, 3> quota{sizes[ci] * ratios.train / total, sizes[ci] * ratios.val / total,
                                      sizes[ci] * ratios.test / total};
    auto fill = [&](const std::array<double, 3>& goal) {
      std::vector<int> where(fruits.size());
      std::array<double, 3> have{0, 0, 0};
      for (std::size_t f = 0; f < fruits.size(); ++f) {
        int s_best = 0;
        for (int s = 1; s < 3; ++s)
          if (goal[s] - have[s] > goal[s_best] - have[s_best] + 1e-12) s_best = s;
        have[s_best] += static_cast<double>(fruits[f]->size());
        where[f] = s_best;
      }
      double worst = 0.0;
      for (int s = 0; s < 3; ++s) worst = std::max(worst, std::abs(have[s] - quota[s]));
      return std::make_pair(worst, where);
    };
    auto best = fill({static_cast<double>(targets[ci][0]), static_cast<double>(targets[ci][1]),
                      static_cast<double>(targets[ci][2])});
    if (fruits.front()->size() > 1) {
      auto alt = fill(quota);
      if (alt.first < best.first - 1e-12) best = std::move(alt);
    }
    for (std::size_t f = 0; f < fruits.size(); ++f)
      for (const auto& id : *fruits[f]) out.subset[id] = static_cast<Subset>(best.second[f]);
  }
  return out;
}

std::vector<double> balance(const std::vector<int>& cls, int num_classes) {
  require(!cls.empty(), ErrorCode::kInsufficientData, "cannot balance an empty training set");
  std::vector<int> n(num_classes, 0);
  for (int c : cls) {
    require(c >= 0 && c < num_classes, ErrorCode::kOutOfRange, "class index out of range");
    ++n[c];
  }
  for (int c = 0; c < num_classes; ++c)
    if (n[c] == 0) fail(ErrorCode::kInsufficientData, "class " + std::to_string(c) + " has no training records");
  std::vector<double> w(cls.size());
  for (std::size_t i = 0; i < cls.size(); ++i) w[i] = 1.0 / (static_cast<double>(num_classes) * n[cls[i]]);
  return w;
}

// ---------------------------------------------------------------------------
// augmentation

void AugmentationConfig::validate() const {
  require(noise_sigma >= 0, ErrorCode::kInvalidArgument, "noise sigma must be non-negative");
  require(cut_min > 0 && cut_min <= cut_max && cut_max <= 1.0, ErrorCode::kInvalidArgument,
          "random cut extent must satisfy 0 < min <= max <= 1");
  require(probability >= 0 && probability <= 1, ErrorCode::kInvalidArgument, "augmentation probability must be in [0, 1]");
}

HyperCube rotate90(const HyperCube& cube, int k) {
  k = ((k % 4) + 4) % 4;
  if (k == 0) return cube;
  const int h = cube.height(), w = cube.width();
  const int oh = k == 2 ? h : w, ow = k == 2 ? w : h;
  HyperCube out(oh, ow, cube.axis());
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      int sy, sx;  // counter-clockwise turns
      if (k == 1) sy = x, sx = w - 1 - y;
      else if (k == 2) sy = h - 1 - y, sx = w - 1 - x;
      else sy = h - 1 - x, sx = y;
      auto src = cube.pixel(sy, sx);
      std::copy(src.begin(), src.end(), out.pixel(y, x).begin());
    }
  return out;
}

HyperCube flip_horizontal(const HyperCube& cube) {
  HyperCube out(cube.height(), cube.width(), cube.axis());
  for (int y = 0; y < cube.height(); ++y)
    for (int x = 0; x < cube.width(); ++x) {
      auto src = cube.pixel(y, cube.width() - 1 - x);
      std::copy(src.begin(), src.end(), out.pixel(y, x).begin());
    }
  return out;
}

HyperCube flip_vertical(const HyperCube& cube) {
  HyperCube out(cube.height(), cube.width(), cube.axis());
  for (int y = 0; y < cube.height(); ++y) {
    auto src = cube.data().subspan(cube.index(cube.height() - 1 - y, 0, 0),
                                   static_cast<std::size_t>(cube.width()) * cube.bands());
    std::copy(src.begin(), src.end(), out.pixel(y, 0).begin());
  }
  return out;
}

HyperCube crop(const HyperCube& cube, int y0, int x0, int h, int w) {
  require(y0 >= 0 && x0 >= 0 && h >= 1 && w >= 1 && y0 + h <= cube.height() && x0 + w <= cube.width(),
          ErrorCode::kOutOfRange, "crop rectangle outside the cube");
  HyperCube out(h, w, cube.axis());
  for (int y = 0; y < h; ++y) {
    auto src = cube.data().subspan(cube.index(y0 + y, x0, 0), static_cast<std::size_t>(w) * cube.bands());
    std::copy(src.begin(), src.end(), out.pixel(y, 0).begin());
  }
  return out;
}

namespace {

struct BandMoments {
  std::vector<double> s, s2;
  std::size_t n = 0;

  explicit BandMoments(int bands) : s(bands, 0.0), s2(bands, 0.0) {}
  void add(const HyperCube& c) {
    require(static_cast<std::size_t>(c.bands()) == s.size(), ErrorCode::kShapeMismatch,
            "cubes have different band counts");
    for (int y = 0; y < c.height(); ++y)
      for (int x = 0; x < c.width(); ++x) {
        auto p = c.pixel(y, x);
        if (!is_foreground(p)) continue;
        ++n;
        for (std::size_t k = 0; k < s.size(); ++k) s[k] += p[k], s2[k] += static_cast<double>(p[k]) * p[k];
      }
  }
  std::vector<float> std_dev() const {
    std::vector<float> out(s.size(), 0.0f);
    if (n < 2) return out;
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double m = s[k] / n;
      out[k] = static_cast<float>(std::sqrt(std::max(0.0, s2[k] / n - m * m)));
    }
    return out;
  }
};

std::vector<float> own_band_std(const HyperCube& cube) {
  BandMoments m(cube.bands());
  m.add(cube);
  return m.std_dev();
}

}  // namespace

HyperCube augment(const HyperCube& cube, const AugmentationConfig& cfg, AugmentRng& rng) {
  cfg.validate();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto coin = [&] { return u01(rng) < cfg.probability; };
  HyperCube out = cube;
  if (cfg.rotation && coin()) out = rotate90(out, 1 + static_cast<int>(rng() % 3));
  if (cfg.flip) {
    if (coin()) out = flip_horizontal(out);
    if (coin()) out = flip_vertical(out);
  }
  if (cfg.random_cut && coin()) {
    const int h = out.height(), w = out.width();
    const int ch = std::clamp(static_cast<int>(std::lround(h * (cfg.cut_min + (cfg.cut_max - cfg.cut_min) * u01(rng)))), 1, h);
    const int cw = std::clamp(static_cast<int>(std::lround(w * (cfg.cut_min + (cfg.cut_max - cfg.cut_min) * u01(rng)))), 1, w);
    const int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(h - ch + 1));
    const int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(w - cw + 1));
    out = resize(crop(out, y0, x0, ch, cw), h, w);
  }
  if (cfg.noise && cfg.noise_sigma > 0 && coin()) {
    const std::vector<float> ref = cfg.reference_std.empty() ? own_band_std(out) : cfg.reference_std;
    require(static_cast<int>(ref.size()) == out.bands(), ErrorCode::kShapeMismatch,
            "noise reference std has the wrong band count");
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    // background stays exactly zero
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        auto p = out.pixel(y, x);
        if (!is_foreground(p)) continue;
        for (int k = 0; k < out.bands(); ++k) p[k] += static_cast<float>(cfg.noise_sigma) * ref[k] * gauss(rng);
      }
  }
  // restore the resize target if a rotation changed the aspect ratio
  if (out.height() != cube.height() || out.width() != cube.width()) out = resize(out, cube.height(), cube.width());
  return out;
}

std::vector<float> band_reference_std(const std::vector<HyperCube>& cubes) {
  require(!cubes.empty(), ErrorCode::kInvalidArgument, "no cubes to measure");
  BandMoments m(cubes.front().bands());
  for (const auto& c : cubes) m.add(c);
  return m.std_dev();
}

}  // namespace hsf
