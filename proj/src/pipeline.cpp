#include "hsfruit/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hsfruit/attribution.hpp"
#include "hsfruit/envi_io.hpp"
#include "hsfruit/falsecolor.hpp"
#include "hsfruit/image.hpp"
#include "hsfruit/preprocess.hpp"
#include "hsfruit/synth.hpp"

namespace hsf {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  fail(ErrorCode::kInvalidArgument, "config field '" + field + "': " + why);
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) bad_field(where.empty() ? "<root>" : where, "expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) bad_field(where.empty() ? k : where + "." + k, "unknown field");
}

template <class T>
void get(const json& j, const std::string& key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    bad_field(where.empty() ? key : where + "." + key, "wrong type (" + std::string(j.at(key).type_name()) + ")");
  }
}

std::set<std::string> keys_of(const std::string& json_text) {
  std::set<std::string> s;
  const json j = json::parse(json_text);
  for (const auto& [k, v] : j.items()) s.insert(k);
  return s;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot read " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot write " + p.string());
  f << text;
}

json pca_to_json(const PcaProjection& p) {
  return {{"mean", p.mean},
          {"components", p.components},
          {"eigenvalues", p.eigenvalues},
          {"explained_variance_ratio", p.explained_variance_ratio},
          {"total_variance", p.total_variance}};
}

PcaProjection pca_from_json(const json& j) {
  PcaProjection p;
  p.mean = j.at("mean").get<std::vector<double>>();
  p.components = j.at("components").get<std::vector<std::vector<double>>>();
  p.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
  p.explained_variance_ratio = j.at("explained_variance_ratio").get<std::vector<double>>();
  p.total_variance = j.at("total_variance").get<double>();
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// config

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  check_keys(j, "",
             {"data_root", "output_dir", "overwrite", "manifest", "split_file", "camera", "fruit", "category",
              "reduction", "model", "train", "seed", "tta_views", "checkpoint", "synth", "calibrate", "preprocess",
              "grid", "ablate", "attribute", "falsecolor"});
  get(j, "data_root", c.data_root, "");
  get(j, "output_dir", c.output_dir, "");
  get(j, "overwrite", c.overwrite, "");
  get(j, "manifest", c.manifest, "");
  get(j, "split_file", c.split_file, "");
  get(j, "camera", c.camera, "");
  get(j, "fruit", c.fruit, "");
  get(j, "seed", c.seed, "");
  get(j, "tta_views", c.tta_views, "");
  get(j, "checkpoint", c.checkpoint, "");
  std::string s;
  if (j.contains("category")) {
    get(j, "category", s, "");
    try {
      c.category = category_from_string(s);
    } catch (const Error& e) {
      bad_field("category", e.what());
    }
  }
  if (j.contains("reduction")) {
    get(j, "reduction", s, "");
    try {
      c.reduction = reduction_from_string(s);
    } catch (const Error& e) {
      bad_field("reduction", e.what());
    }
  }
  if (j.contains("model")) {
    check_keys(j["model"], "model", keys_of(ModelConfig{}.to_json()));
    try {
      c.model = ModelConfig::from_json(j["model"].dump());
    } catch (const Error& e) {
      bad_field("model", e.what());
    } catch (const json::exception& e) {
      bad_field("model", e.what());
    }
  }
  if (j.contains("train")) {
    check_keys(j["train"], "train", keys_of(TrainConfig{}.to_json()));
    if (j["train"].contains("augmentation")) {
      const json defaults = json::parse(TrainConfig{}.to_json());
      check_keys(j["train"]["augmentation"], "train.augmentation", keys_of(defaults["augmentation"].dump()));
    }
    try {
      c.train = TrainConfig::from_json(j["train"].dump());
    } catch (const Error& e) {
      bad_field("train", e.what());
    } catch (const json::exception& e) {
      bad_field("train", e.what());
    }
  }
  if (j.contains("synth")) {
    const auto& t = j["synth"];
    check_keys(t, "synth", {"n", "balance", "size", "signal", "noise", "band_amplitude", "raw"});
    get(t, "n", c.synth.n, "synth");
    get(t, "balance", c.synth.balance, "synth");
    get(t, "size", c.synth.size, "synth");
    get(t, "signal", c.synth.signal, "synth");
    get(t, "noise", c.synth.noise, "synth");
    get(t, "band_amplitude", c.synth.band_amplitude, "synth");
    get(t, "raw", c.synth.raw, "synth");
  }
  if (j.contains("calibrate")) {
    const auto& t = j["calibrate"];
    check_keys(t, "calibrate", {"raw", "white", "dark"});
    get(t, "raw", c.calibrate.raw, "calibrate");
    get(t, "white", c.calibrate.white, "calibrate");
    get(t, "dark", c.calibrate.dark, "calibrate");
  }
  if (j.contains("preprocess")) {
    const auto& t = j["preprocess"];
    check_keys(t, "preprocess", {"mask_dir", "threshold", "size", "max_training_pixels"});
    get(t, "mask_dir", c.preprocess.mask_dir, "preprocess");
    get(t, "threshold", c.preprocess.threshold, "preprocess");
    get(t, "size", c.preprocess.size, "preprocess");
    get(t, "max_training_pixels", c.preprocess.max_training_pixels, "preprocess");
  }
  if (j.contains("grid")) {
    const auto& t = j["grid"];
    check_keys(t, "grid", {"models", "reductions", "categories", "seeds"});
    get(t, "models", c.grid.models, "grid");
    get(t, "reductions", c.grid.reductions, "grid");
    get(t, "categories", c.grid.categories, "grid");
    get(t, "seeds", c.grid.seeds, "grid");
  }
  if (j.contains("ablate")) {
    const auto& t = j["ablate"];
    check_keys(t, "ablate", {"axis", "seeds"});
    get(t, "axis", c.ablate.axis, "ablate");
    get(t, "seeds", c.ablate.seeds, "ablate");
  }
  if (j.contains("attribute")) {
    const auto& t = j["attribute"];
    check_keys(t, "attribute", {"record", "target", "steps"});
    get(t, "record", c.attribute.record, "attribute");
    get(t, "target", c.attribute.target, "attribute");
    get(t, "steps", c.attribute.steps, "attribute");
  }
  if (j.contains("falsecolor")) {
    const auto& t = j["falsecolor"];
    check_keys(t, "falsecolor", {"bundle", "unlabeled_manifests", "render", "autoencoder_epochs",
                                 "max_pixels_per_cube", "freeze_encoder", "encoder_lr_scale"});
    get(t, "bundle", c.falsecolor.bundle, "falsecolor");
    get(t, "unlabeled_manifests", c.falsecolor.unlabeled_manifests, "falsecolor");
    get(t, "render", c.falsecolor.render, "falsecolor");
    get(t, "autoencoder_epochs", c.falsecolor.autoencoder_epochs, "falsecolor");
    get(t, "max_pixels_per_cube", c.falsecolor.max_pixels_per_cube, "falsecolor");
    get(t, "freeze_encoder", c.falsecolor.freeze_encoder, "falsecolor");
    get(t, "encoder_lr_scale", c.falsecolor.encoder_lr_scale, "falsecolor");
  }
  c.validate();
  return c;
}

std::string PipelineConfig::to_json() const {
  json j;
  j["data_root"] = data_root;
  j["output_dir"] = output_dir;
  j["overwrite"] = overwrite;
  j["manifest"] = manifest;
  j["split_file"] = split_file;
  j["camera"] = camera;
  j["fruit"] = fruit;
  j["category"] = hsf::to_string(category);
  j["reduction"] = hsf::to_string(reduction);
  j["model"] = json::parse(model.to_json());
  j["train"] = json::parse(train.to_json());
  j["seed"] = seed;
  j["tta_views"] = tta_views;
  j["checkpoint"] = checkpoint;
  j["synth"] = {{"n", synth.n},          {"balance", synth.balance}, {"size", synth.size},
                {"signal", synth.signal}, {"noise", synth.noise},     {"band_amplitude", synth.band_amplitude},
                {"raw", synth.raw}};
  j["calibrate"] = {{"raw", calibrate.raw}, {"white", calibrate.white}, {"dark", calibrate.dark}};
  j["preprocess"] = {{"mask_dir", preprocess.mask_dir},
                     {"threshold", preprocess.threshold},
                     {"size", preprocess.size},
                     {"max_training_pixels", preprocess.max_training_pixels}};
  j["grid"] = {{"models", grid.models},
               {"reductions", grid.reductions},
               {"categories", grid.categories},
               {"seeds", grid.seeds}};
  j["ablate"] = {{"axis", ablate.axis}, {"seeds", ablate.seeds}};
  j["attribute"] = {{"record", attribute.record}, {"target", attribute.target}, {"steps", attribute.steps}};
  j["falsecolor"] = {{"bundle", falsecolor.bundle},
                     {"unlabeled_manifests", falsecolor.unlabeled_manifests},
                     {"render", falsecolor.render},
                     {"autoencoder_epochs", falsecolor.autoencoder_epochs},
                     {"max_pixels_per_cube", falsecolor.max_pixels_per_cube},
                     {"freeze_encoder", falsecolor.freeze_encoder},
                     {"encoder_lr_scale", falsecolor.encoder_lr_scale}};
  return j.dump(2);
}

std::string PipelineConfig::hash() const {
  auto j = json::parse(to_json());
  j.erase("output_dir");
  j.erase("overwrite");
  return fnv1a64_hex(j.dump());
}

void PipelineConfig::validate() const {
  if (tta_views < 0) bad_field("tta_views", "must be >= 0 (0 = plain evaluation)");
  if (!camera.empty()) {
    try {
      (void)CameraProfile::by_name(camera);
    } catch (const Error& e) {
      bad_field("camera", e.what());
    }
  }
  if (!fruit.empty()) {
    try {
      (void)fruit_from_string(fruit);
    } catch (const Error& e) {
      bad_field("fruit", e.what());
    }
  }
  if (synth.n < 3) bad_field("synth.n", "must be >= 3");
  if (synth.size < 4) bad_field("synth.size", "must be >= 4");
  if (synth.noise < 0) bad_field("synth.noise", "must be >= 0");
  try {
    (void)synth_signal_from_string(synth.signal);
  } catch (const Error& e) {
    bad_field("synth.signal", e.what());
  }
  if (preprocess.threshold < 0 || preprocess.threshold > 1) bad_field("preprocess.threshold", "must lie in [0, 1]");
  if (preprocess.size < 1) bad_field("preprocess.size", "must be >= 1");
  for (const auto& r : grid.reductions) {
    try {
      (void)reduction_from_string(r);
    } catch (const Error& e) {
      bad_field("grid.reductions", e.what());
    }
  }
  for (const auto& m : grid.models)
    if (m != "svm" && m != "knn") {
      try {
        (void)architecture_from_string(m);
      } catch (const Error& e) {
        bad_field("grid.models", e.what());
      }
    }
  for (const auto& cat : grid.categories) {
    try {
      (void)category_from_string(cat);
    } catch (const Error& e) {
      bad_field("grid.categories", e.what());
    }
  }
  if (grid.seeds.empty()) bad_field("grid.seeds", "must not be empty");
  try {
    (void)ablation_values(ablate.axis);
  } catch (const Error& e) {
    bad_field("ablate.axis", e.what());
  }
  if (ablate.seeds.empty()) bad_field("ablate.seeds", "must not be empty");
  if (attribute.steps < 1) bad_field("attribute.steps", "must be >= 1");
  if (attribute.target < -1 || attribute.target >= kNumClasses) bad_field("attribute.target", "must be -1 or a class index");
  if (falsecolor.autoencoder_epochs < 1) bad_field("falsecolor.autoencoder_epochs", "must be >= 1");
  if (!(falsecolor.encoder_lr_scale >= 0.0)) bad_field("falsecolor.encoder_lr_scale", "must be >= 0");
}

fs::path PipelineConfig::resolve(const std::string& p) const {
  fs::path path(p);
  if (path.is_absolute()) return path;
  std::string root = data_root;
  if (root.empty()) {
    const char* env = std::getenv("HSFRUIT_DATA_ROOT");
    root = env && *env ? env : ".";
  }
  return fs::path(root) / path;
}

std::string apply_overrides(const std::string& config_json, const std::vector<std::string>& overrides) {
  json j;
  try {
    j = config_json.empty() ? json::object() : json::parse(config_json);
  } catch (const json::exception& e) {
    fail(ErrorCode::kInvalidArgument, std::string("config is not valid JSON: ") + e.what());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::kInvalidArgument, "override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      require(!part.empty(), ErrorCode::kInvalidArgument, "override key '" + key + "' has an empty component");
      if (!node->is_object()) bad_field(key, "parent is not an object");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part)) (*node)[part] = json::object();
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return j.dump();
}

std::vector<std::string> pipeline_commands() {
  return {"calibrate", "preprocess", "split", "train", "evaluate", "grid", "ablate", "attribute", "falsecolor", "synth"};
}

// ---------------------------------------------------------------------------
// shared helpers

namespace {

struct Ctx {
  const PipelineConfig& cfg;
  fs::path out;
  const GridLog& log;

  void say(const std::string& s) const {
    if (log) log(s);
  }
};

fs::path prepare_output(const PipelineConfig& cfg) {
  if (cfg.output_dir.empty()) bad_field("output_dir", "required");
  const fs::path out(cfg.output_dir);
  if (fs::exists(out)) {
    require(fs::is_directory(out), ErrorCode::kIo, "output " + out.string() + " exists and is not a directory");
    if (!fs::is_empty(out)) {
      require(cfg.overwrite, ErrorCode::kIo,
              "output directory " + out.string() + " is not empty; outputs are write-once (use --overwrite)");
      fs::remove_all(out);
    }
  }
  fs::create_directories(out);
  return out;
}

std::vector<LabelRecord> load_records(const PipelineConfig& cfg, const std::string& manifest, fs::path* dir) {
  const fs::path path = cfg.resolve(manifest);
  auto all = load_manifest(path);
  if (dir) *dir = path.parent_path();
  std::vector<LabelRecord> out;
  for (auto& r : all) {
    if (!cfg.camera.empty() && r.camera != cfg.camera) continue;
    if (!cfg.fruit.empty() && to_string(r.fruit) != cfg.fruit) continue;
    out.push_back(std::move(r));
  }
  return out;
}

fs::path cube_path(const fs::path& dir, const LabelRecord& r) {
  const fs::path p(r.path.empty() ? r.recording_id : r.path);
  return p.is_absolute() ? p : dir / p;
}

struct Sets {
  CubeSet train, val, test;
  SplitAssignment split;
};

Sets load_sets(const PipelineConfig& cfg, const std::vector<LabelRecord>& records, const fs::path& dir,
               Category category) {
  Sets s;
  if (!cfg.split_file.empty()) {
    s.split = SplitAssignment::from_json(read_text(cfg.resolve(cfg.split_file)));
    require(s.split.category == category, ErrorCode::kInvalidArgument,
            "split file is for category '" + to_string(s.split.category) + "', config asks for '" +
                to_string(category) + "'");
  } else {
    s.split = split(records, category, cfg.seed);
  }
  for (const auto& r : records) {
    const auto label = label_for(r, category);
    const auto it = s.split.subset.find(r.recording_id);
    if (!label || it == s.split.subset.end()) continue;
    CubeSet& dst = it->second == Subset::kTrain ? s.train : it->second == Subset::kVal ? s.val : s.test;
    dst.add(load_hypercube(cube_path(dir, r)), label->class_index, r.recording_id);
  }
  return s;
}

RgbImage preview(const HyperCube& c) {
  try {
    return to_rgb(c);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNoVisibleBand) throw;
  }
  // no visible coverage: band mean as grey, scaled to the image maximum
  RgbImage img(c.height(), c.width());
  double peak = 0.0;
  std::vector<double> m(c.pixel_count(), 0.0);
  for (int y = 0; y < c.height(); ++y)
    for (int x = 0; x < c.width(); ++x) {
      double s = 0.0;
      for (float v : c.pixel(y, x)) s += v;
      m[static_cast<std::size_t>(y) * c.width() + x] = s / c.bands();
      peak = std::max(peak, s / c.bands());
    }
  for (std::size_t p = 0; p < m.size(); ++p)
    for (int ch = 0; ch < 3; ++ch) img.data[p * 3 + ch] = peak > 0 ? static_cast<float>(m[p] / peak) : 0.0f;
  return img;
}

int class_count(const CubeSet& s, int c) {
  return static_cast<int>(std::count(s.labels.begin(), s.labels.end(), c));
}

json set_counts(const Sets& s) {
  json j;
  for (const auto& [name, set] : {std::pair<const char*, const CubeSet*>{"train", &s.train},
                                  {"val", &s.val},
                                  {"test", &s.test}})
    j[name] = {{"total", set->size()}, {"per_class", {class_count(*set, 0), class_count(*set, 1), class_count(*set, 2)}}};
  return j;
}

ModelConfig model_for(const PipelineConfig& cfg, const CubeSet& train_set, std::uint64_t seed) {
  ModelConfig m = cfg.model;
  const HyperCube& c = train_set.cubes.front();
  if (m.in_bands != c.bands()) {
    if (m.architecture == Architecture::kHsCnn) m.widths.clear();
    m.in_bands = c.bands();
  }
  m.input_size = c.height();
  m.seed = seed;
  return m;
}

TrainedModel load_trained(const PipelineConfig& cfg) {
  if (cfg.checkpoint.empty()) bad_field("checkpoint", "required");
  return load_trained_model(cfg.resolve(cfg.checkpoint));
}

void reduce_set(Reduction r, const PcaProjection* pca, CubeSet& s) {
  for (auto& c : s.cubes) c = reduce_cube(r, pca, c);
}

// ---------------------------------------------------------------------------
// commands

json cmd_synth(const Ctx& x) {
  const auto& cfg = x.cfg;
  SynthDatasetOptions o;
  o.n = cfg.synth.n;
  o.balance = cfg.synth.balance;
  o.size = cfg.synth.size;
  o.noise_sigma = cfg.synth.noise;
  o.band_amplitude = cfg.synth.band_amplitude;
  o.signal = synth_signal_from_string(cfg.synth.signal);
  o.camera = CameraProfile::by_name(cfg.camera.empty() ? "specim_fx10" : cfg.camera);
  o.fruit = cfg.fruit.empty() ? Fruit::kAvocado : fruit_from_string(cfg.fruit);
  o.seed = cfg.seed;
  x.say("generating " + std::to_string(o.n) + " synthetic cubes");
  const auto data = generate_dataset(o);
  std::vector<LabelRecord> records;
  if (!cfg.synth.raw) {
    records = write_dataset(data, x.out);
  } else {
    for (std::size_t i = 0; i < data.samples.size(); ++i) {
      const auto& s = data.samples[i];
      RawSceneOptions ro;
      ro.seed = cfg.seed * 1000003ull + i;
      const auto scene = render_raw_scene(s, ro);
      const std::string id = s.record.recording_id;
      save_raw_frame(scene.raw, x.out / id);
      save_raw_frame(scene.white, x.out / (id + "_white"));
      save_raw_frame(scene.dark, x.out / (id + "_dark"));
      HyperCube m(scene.fruit_mask.height, scene.fruit_mask.width, WavelengthAxis(std::vector<double>{0.0}));
      for (std::size_t k = 0; k < scene.fruit_mask.data.size(); ++k) m.data()[k] = scene.fruit_mask.data[k];
      save_cube(m, x.out / (id + "_mask"));
      records.push_back(s.record);
    }
    save_manifest(records, x.out / "manifest.csv");
  }
  int counts[3] = {0, 0, 0};
  for (int c : data.classes) ++counts[c];
  return {{"records", records.size()},
          {"class_counts", counts},
          {"raw", cfg.synth.raw},
          {"signal", cfg.synth.signal},
          {"manifest", (x.out / "manifest.csv").string()}};
}

RawFrame load_refs(const PipelineConfig& cfg, const std::vector<std::string>& paths) {
  std::vector<RawFrame> frames;
  for (const auto& p : paths) frames.push_back(load_raw_frame(cfg.resolve(p)));
  return average_references(frames);
}

bool is_aux(const std::string& stem) {
  for (const char* suf : {"_white", "_dark", "_mask"}) {
    const std::string s(suf);
    if (stem.size() > s.size() && stem.compare(stem.size() - s.size(), s.size(), s) == 0) return true;
  }
  return false;
}

json cmd_calibrate(const Ctx& x) {
  const auto& cfg = x.cfg;
  if (cfg.calibrate.raw.empty()) bad_field("calibrate.raw", "required");
  const fs::path raw = cfg.resolve(cfg.calibrate.raw);
  std::vector<fs::path> frames;
  if (fs::is_directory(raw)) {
    for (const auto& e : fs::directory_iterator(raw))
      if (e.path().extension() == ".hdr" && !is_aux(e.path().stem().string())) frames.push_back(e.path());
    std::sort(frames.begin(), frames.end());
  } else {
    frames.push_back(raw);
  }
  require(!frames.empty(), ErrorCode::kIo, "no raw frames under " + raw.string());
  if (cfg.calibrate.white.empty() != cfg.calibrate.dark.empty())
    bad_field(cfg.calibrate.white.empty() ? "calibrate.white" : "calibrate.dark",
              "give both white and dark references or neither");
  std::optional<RawFrame> white, dark;
  if (!cfg.calibrate.white.empty()) {
    white = load_refs(cfg, cfg.calibrate.white);
    dark = load_refs(cfg, cfg.calibrate.dark);
  }
  json items = json::array();
  for (const auto& f : frames) {
    const auto [hdr, bin] = envi_pair(f);
    const std::string stem = hdr.stem().string();
    const RawFrame r = load_raw_frame(hdr);
    const RawFrame w = white ? *white : load_raw_frame(hdr.parent_path() / (stem + "_white.hdr"));
    const RawFrame d = dark ? *dark : load_raw_frame(hdr.parent_path() / (stem + "_dark.hdr"));
    const HyperCube c = calibrate(r, w, d);
    save_cube(c, x.out / stem);
    // hand labels travel with the frame
    const fs::path mask = hdr.parent_path() / (stem + "_mask.hdr");
    if (fs::exists(mask)) save_cube(load_hypercube(mask), x.out / (stem + "_mask"));
    std::size_t invalid = 0;
    if (c.mask)
      for (auto v : *c.mask) invalid += v == 0;
    items.push_back({{"frame", stem}, {"invalid_pixels", invalid}});
    x.say("calibrated " + stem);
  }
  // carry the manifest along so later commands find the calibrated cubes under the same names
  const fs::path dir = fs::is_directory(raw) ? raw : raw.parent_path();
  if (fs::exists(dir / "manifest.csv")) save_manifest(load_manifest(dir / "manifest.csv"), x.out / "manifest.csv");
  return {{"frames", items}, {"count", items.size()}};
}

json cmd_preprocess(const Ctx& x) {
  const auto& cfg = x.cfg;
  fs::path dir;
  const auto records = load_records(cfg, cfg.manifest, &dir);
  require(!records.empty(), ErrorCode::kInsufficientData, "manifest has no matching records");
  const fs::path mask_dir = cfg.preprocess.mask_dir.empty() ? fs::path() : cfg.resolve(cfg.preprocess.mask_dir);

  std::vector<HyperCube> cubes;
  LabeledPixels labeled;
  std::mt19937_64 rng(cfg.seed);
  std::size_t masks = 0;
  for (const auto& r : records) {
    cubes.push_back(load_hypercube(cube_path(dir, r)));
    const fs::path base = cube_path(dir, r);
    const fs::path mp = (mask_dir.empty() ? base.parent_path() : mask_dir) / (base.stem().string() + "_mask.hdr");
    if (!fs::exists(mp)) continue;
    const HyperCube m = load_hypercube(mp);
    const HyperCube& c = cubes.back();
    require(m.height() == c.height() && m.width() == c.width(), ErrorCode::kShapeMismatch,
            "mask " + mp.string() + " does not match its cube");
    ++masks;
    for (int yy = 0; yy < c.height(); ++yy)
      for (int xx = 0; xx < c.width(); ++xx) {
        if (labeled.spectra.bands == 0) labeled.spectra.bands = c.bands();
        labeled.spectra.append(c.pixel(yy, xx));
        labeled.is_fruit.push_back(m.at(yy, xx, 0) > 0.5f ? 1 : 0);
      }
  }
  require(masks > 0, ErrorCode::kInsufficientData,
          "no <id>_mask label files found for the background classifier (see preprocess.mask_dir)");
  PixelClassifierOptions po;
  po.max_training_pixels = cfg.preprocess.max_training_pixels;
  po.seed = cfg.seed;
  x.say("training background classifier on " + std::to_string(labeled.is_fruit.size()) + " labeled pixels");
  const PixelClassifier clf = train_background_classifier(labeled, po);

  std::vector<LabelRecord> kept;
  json skipped = json::array(), items = json::array();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const BinaryMask mask = segment(cubes[i], clf, cfg.preprocess.threshold);
    if (mask.count() == 0) {
      skipped.push_back({{"record", r.recording_id}, {"reason", "no fruit pixels above the threshold"}});
      continue;
    }
    const HyperCube out = resize(crop_to_fruit(cubes[i], mask), cfg.preprocess.size, cfg.preprocess.size);
    save_cube(out, x.out / r.recording_id);
    write_png(preview(out), x.out / "previews" / (r.recording_id + ".png"));
    LabelRecord k = r;
    k.path = r.recording_id;
    kept.push_back(k);
    items.push_back({{"record", r.recording_id}, {"fruit_pixels", mask.count()}});
  }
  save_manifest(kept, x.out / "manifest.csv");
  return {{"classifier_heldout_accuracy", clf.heldout_accuracy()},
          {"labeled_recordings", masks},
          {"cubes", items},
          {"skipped", skipped}};
}

json cmd_split(const Ctx& x) {
  const auto& cfg = x.cfg;
  const auto records = load_records(cfg, cfg.manifest, nullptr);
  const auto s = split(records, cfg.category, cfg.seed);
  write_text(x.out / "split.json", s.to_json());
  std::map<std::string, const LabelRecord*> by_id;
  for (const auto& r : records) by_id[r.recording_id] = &r;
  json counts;
  for (Subset sub : {Subset::kTrain, Subset::kVal, Subset::kTest}) {
    int pc[3] = {0, 0, 0};
    for (const auto& id : s.ids(sub)) ++pc[label_for(*by_id.at(id), cfg.category)->class_index];
    counts[to_string(sub)] = {{"total", s.count(sub)}, {"per_class", pc}};
  }
  return {{"category", to_string(cfg.category)}, {"seed", cfg.seed}, {"counts", counts},
          {"split_file", (x.out / "split.json").string()}};
}

json cmd_train(const Ctx& x) {
  const auto& cfg = x.cfg;
  fs::path dir;
  const auto records = load_records(cfg, cfg.manifest, &dir);
  Sets s = load_sets(cfg, records, dir, cfg.category);
  require(!s.train.empty() && !s.val.empty(), ErrorCode::kInsufficientData, "empty training or validation split");
  std::optional<PcaProjection> pca;
  if (cfg.reduction == Reduction::kPca5) pca = fit_reduction_pca(s.train, cfg.seed);
  for (CubeSet* set : {&s.train, &s.val, &s.test}) reduce_set(cfg.reduction, pca ? &*pca : nullptr, *set);

  ClassifierModel model = build_model(model_for(cfg, s.train, cfg.model.seed));
  TrainConfig tc = cfg.train;
  x.say("training " + to_string(model.config().architecture) + " (" + std::to_string(model.param_count()) +
        " parameters) on " + std::to_string(s.train.size()) + " cubes");
  const TrainReport rep = train(model, s.train, s.val, tc, [&](const EpochStats& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d  train loss %.4f acc %.3f  val loss %.4f acc %.3f", e.epoch, e.train_loss,
                  e.train_accuracy, e.val_loss, e.val_accuracy);
    x.say(buf);
  });
  json extra{{"reduction", to_string(cfg.reduction)},
             {"category", to_string(cfg.category)},
             {"config_hash", cfg.hash()},
             {"split_seed", s.split.seed}};
  if (pca) extra["pca"] = pca_to_json(*pca);
  save_checkpoint(model, x.out / "model.ckpt", extra.dump());
  json report = json::parse(rep.to_json());
  report["pipeline_config_hash"] = cfg.hash();
  write_text(x.out / "train_report.json", report.dump(2) + "\n");
  std::ostringstream hist;
  hist << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  for (const auto& e : rep.epochs)
    hist << e.epoch << ',' << e.train_loss << ',' << e.train_accuracy << ',' << e.val_loss << ',' << e.val_accuracy << '\n';
  write_text(x.out / "history.csv", hist.str());
  return {{"checkpoint", (x.out / "model.ckpt").string()},
          {"parameters", model.param_count()},
          {"best_epoch", rep.best_epoch},
          {"stopped_epoch", rep.stopped_epoch},
          {"best_val_loss", rep.best_val_loss},
          {"best_val_accuracy", rep.best_val_accuracy},
          {"sets", set_counts(s)}};
}

json cmd_evaluate(const Ctx& x) {
  const auto& cfg = x.cfg;
  TrainedModel l = load_trained(cfg);
  fs::path dir;
  const auto records = load_records(cfg, cfg.manifest, &dir);
  Sets s = load_sets(cfg, records, dir, cfg.category);
  require(!s.test.empty(), ErrorCode::kInsufficientData, "empty test split");
  reduce_set(l.reduction, l.pca ? &*l.pca : nullptr, s.test);
  EvalReport r = cfg.tta_views == 0 ? evaluate(l.model, s.test) : evaluate_tta(l.model, s.test, cfg.tta_views);
  if (cfg.tta_views == 0) r.tta_views = 0;
  r.config_hash = cfg.hash();
  json rep = json::parse(r.to_json());
  rep["ids"] = s.test.ids;
  rep["labels"] = s.test.labels;
  write_text(x.out / "eval_report.json", rep.dump(2) + "\n");
  std::ostringstream cm;
  cm << "true\\pred,0,1,2\n";
  for (int i = 0; i < 3; ++i) cm << i << ',' << r.confusion[i][0] << ',' << r.confusion[i][1] << ',' << r.confusion[i][2] << '\n';
  write_text(x.out / "confusion.csv", cm.str());
  return {{"accuracy", r.accuracy}, {"tta_views", cfg.tta_views}, {"test_records", s.test.size()},
          {"confusion", r.confusion}, {"report", (x.out / "eval_report.json").string()}};
}

json cmd_grid(const Ctx& x) {
  const auto& cfg = x.cfg;
  fs::path dir;
  const auto records = load_records(cfg, cfg.manifest, &dir);
  std::vector<std::string> cats = cfg.grid.categories;
  if (cats.empty()) cats.push_back(to_string(cfg.category));
  std::set<std::string> cams;
  for (const auto& r : records) cams.insert(r.camera);
  std::vector<GridTask> tasks;
  for (const auto& cam : cams)
    for (const auto& cat : cats) {
      std::vector<LabelRecord> sub;
      for (const auto& r : records)
        if (r.camera == cam) sub.push_back(r);
      GridTask t;
      t.camera = cam;
      t.category = cat;
      try {
        Sets s = load_sets(cfg, sub, dir, category_from_string(cat));
        t.train = std::move(s.train);
        t.val = std::move(s.val);
        t.test = std::move(s.test);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kInsufficientData) throw;
        x.say("no usable split for " + cam + "/" + cat + ": " + e.what());
      }
      tasks.push_back(std::move(t));
    }
  GridOptions o;
  o.models = cfg.grid.models;
  o.reductions.clear();
  for (const auto& r : cfg.grid.reductions) o.reductions.push_back(reduction_from_string(r));
  o.train = cfg.train;
  o.hscnn = cfg.model;
  o.tta_views = std::max(1, cfg.tta_views);
  o.seeds = cfg.grid.seeds;
  const auto table = run_benchmark_grid(tasks, o, x.log);
  write_text(x.out / "table.csv", table.to_csv());
  json tj = json::parse(table.to_json());
  write_text(x.out / "table.json", tj.dump(2) + "\n");
  int present = 0;
  for (const auto& c : table.cells) present += c.present;
  return {{"cells", table.cells.size()}, {"present", present}, {"table", (x.out / "table.csv").string()}};
}

json cmd_ablate(const Ctx& x) {
  const auto& cfg = x.cfg;
  fs::path dir;
  const auto records = load_records(cfg, cfg.manifest, &dir);
  Sets s = load_sets(cfg, records, dir, cfg.category);
  apply_reduction(cfg.reduction, s.train, s.val, s.test, cfg.seed);
  require(!s.train.empty() && !s.val.empty() && !s.test.empty(), ErrorCode::kInsufficientData, "empty split");
  const auto table = run_ablation(cfg.ablate.axis, s.train, s.val, s.test, model_for(cfg, s.train, cfg.model.seed),
                                  cfg.train, cfg.ablate.seeds, std::max(1, cfg.tta_views), x.log);
  write_text(x.out / "ablation.csv", table.to_csv());
  write_text(x.out / "ablation.json", json::parse(table.to_json()).dump(2) + "\n");
  json rows = json::array();
  for (const auto& r : table.rows) rows.push_back({{"value", r.value}, {"mean_accuracy", r.mean_accuracy}});
  return {{"axis", table.axis}, {"rows", rows}, {"table", (x.out / "ablation.csv").string()}};
}

json cmd_attribute(const Ctx& x) {
  const auto& cfg = x.cfg;
  TrainedModel l = load_trained(cfg);
  fs::path dir;
  const auto records = load_records(cfg, cfg.manifest, &dir);
  std::string id = cfg.attribute.record;
  if (id.empty()) {
    Sets s;
    s.split = cfg.split_file.empty() ? split(records, cfg.category, cfg.seed)
                                     : SplitAssignment::from_json(read_text(cfg.resolve(cfg.split_file)));
    const auto test = s.split.ids(Subset::kTest);
    require(!test.empty(), ErrorCode::kInsufficientData, "empty test split");
    id = test.front();
  }
  const LabelRecord* rec = nullptr;
  for (const auto& r : records)
    if (r.recording_id == id) rec = &r;
  if (!rec) bad_field("attribute.record", "no record '" + id + "' in the manifest");
  int target = cfg.attribute.target;
  if (target < 0) {
    const auto lab = label_for(*rec, cfg.category);
    if (!lab) bad_field("attribute.target", "record '" + id + "' has no " + to_string(cfg.category) + " label");
    target = lab->class_index;
  }
  const HyperCube cube = reduce_cube(l.reduction, l.pca ? &*l.pca : nullptr, load_hypercube(cube_path(dir, *rec)));
  x.say("integrated gradients for " + id + " with " + std::to_string(cfg.attribute.steps) + " steps");
  const auto a = integrated_gradients(l.model, cube, target, nullptr, cfg.attribute.steps);
  write_attribution_outputs(a, x.out, id);
  const auto spec = spectral_impact(a);
  std::size_t peak = 0;
  for (std::size_t b = 0; b < spec.absolute_sum.size(); ++b)
    if (spec.absolute_sum[b] > spec.absolute_sum[peak]) peak = b;
  return {{"record", id},
          {"target_class", target},
          {"completeness_gap", a.completeness_gap},
          {"f_input", a.f_input},
          {"f_baseline", a.f_baseline},
          {"peak_wavelength_nm", spec.wavelength_nm.empty() ? 0.0 : spec.wavelength_nm[peak]}};
}

json cmd_falsecolor(const Ctx& x) {
  const auto& cfg = x.cfg;
  fs::path dir;
  const auto records = load_records(cfg, cfg.manifest, &dir);
  json summary;
  EncoderBundle bundle;
  std::vector<std::string> render_ids = cfg.falsecolor.render;
  if (!cfg.falsecolor.bundle.empty()) {
    bundle = load_bundle(cfg.resolve(cfg.falsecolor.bundle));
    if (render_ids.empty())
      for (const auto& r : records) render_ids.push_back(r.recording_id);
  } else {
    Sets s = load_sets(cfg, records, dir, cfg.category);
    std::vector<HyperCube> pool = s.train.cubes;
    std::set<std::string> used(s.train.ids.begin(), s.train.ids.end());
    used.insert(s.val.ids.begin(), s.val.ids.end());
    used.insert(s.test.ids.begin(), s.test.ids.end());
    std::size_t unlabeled = 0;
    for (const auto& r : records)
      if (!used.count(r.recording_id) && !label_for(r, cfg.category)) {
        pool.push_back(load_hypercube(cube_path(dir, r)));
        ++unlabeled;
      }
    for (const auto& m : cfg.falsecolor.unlabeled_manifests) {
      fs::path udir;
      for (const auto& r : load_records(cfg, m, &udir)) {
        pool.push_back(load_hypercube(cube_path(udir, r)));
        ++unlabeled;
      }
    }
    const std::size_t cap = cfg.falsecolor.max_pixels_per_cube == 0
                                ? std::numeric_limits<std::size_t>::max()
                                : cfg.falsecolor.max_pixels_per_cube * pool.size();
    const auto spectra = collect_fruit_pixels(pool, cap, cfg.seed);
    x.say("autoencoder on " + std::to_string(spectra.rows()) + " spectra from " + std::to_string(pool.size()) +
          " cubes (" + std::to_string(unlabeled) + " unlabeled)");
    AutoencoderConfig ac;
    ac.epochs = cfg.falsecolor.autoencoder_epochs;
    ac.seed = cfg.seed;
    bundle = train_autoencoder(spectra, pool.front().axis(), ac);
    summary["autoencoder"] = {{"spectra", spectra.rows()},
                              {"unlabeled_recordings", unlabeled},
                              {"train_mse", bundle.train_mse},
                              {"heldout_mse", bundle.heldout_mse}};
    LatentClassifierConfig lc;
    lc.train = cfg.train;
    lc.freeze_encoder = cfg.falsecolor.freeze_encoder;
    lc.encoder_lr_scale = cfg.falsecolor.encoder_lr_scale;
    lc.category = to_string(cfg.category);
    lc.classifier.seed = cfg.model.seed;
    x.say("fine-tuning encoder with the latent classifier");
    const auto r = train_latent_classifier(bundle, s.train, s.val, lc);
    summary["latent_classifier"] = {{"val_accuracy", r.val_accuracy},
                                    {"test_accuracy", s.test.empty() ? 0.0 : evaluate(r.model, s.test).accuracy},
                                    {"best_epoch", r.report.best_epoch}};
    save_bundle(bundle, x.out / "bundle.bin", &r.model);
    summary["bundle"] = (x.out / "bundle.bin").string();
    if (render_ids.empty()) render_ids = s.test.ids;
  }
  std::string warning;
  json rendered = json::array();
  for (const auto& id : render_ids) {
    const LabelRecord* rec = nullptr;
    for (const auto& r : records)
      if (r.recording_id == id) rec = &r;
    if (!rec) bad_field("falsecolor.render", "no record '" + id + "' in the manifest");
    const auto img = render_false_color(bundle, load_hypercube(cube_path(dir, *rec)), &warning);
    write_png(img, x.out / "render" / (id + ".png"));
    rendered.push_back(id);
  }
  summary["stage"] = to_string(bundle.stage);
  summary["latent_min"] = bundle.latent_min;
  summary["latent_max"] = bundle.latent_max;
  summary["rendered"] = rendered;
  if (!warning.empty()) summary["warning"] = warning;
  return summary;
}

}  // namespace

TrainedModel load_trained_model(const fs::path& checkpoint) {
  std::string extra;
  ClassifierModel m = load_checkpoint(checkpoint, &extra);
  TrainedModel t{std::move(m), Reduction::kFull, std::nullopt, extra};
  const json j = extra.empty() ? json::object() : json::parse(extra);
  if (j.contains("reduction")) t.reduction = reduction_from_string(j["reduction"].get<std::string>());
  if (j.contains("pca")) t.pca = pca_from_json(j["pca"]);
  return t;
}

std::vector<double> TrainedModel::predict(const HyperCube& cube) const {
  CubeSet one;
  one.add(reduce_cube(reduction, pca ? &*pca : nullptr, cube), 0, "");
  return predict_probabilities(model, one).front();
}

std::string run_command(const std::string& name, const PipelineConfig& cfg, const GridLog& log) {
  using Fn = json (*)(const Ctx&);
  static const std::map<std::string, Fn> table{
      {"calibrate", cmd_calibrate}, {"preprocess", cmd_preprocess}, {"split", cmd_split},
      {"train", cmd_train},         {"evaluate", cmd_evaluate},     {"grid", cmd_grid},
      {"ablate", cmd_ablate},       {"attribute", cmd_attribute},   {"falsecolor", cmd_falsecolor},
      {"synth", cmd_synth}};
  const auto it = table.find(name);
  require(it != table.end(), ErrorCode::kInvalidArgument, "unknown command '" + name + "'");
  cfg.validate();
  const fs::path out = prepare_output(cfg);
  json s;
  try {
    write_text(out / "config.json", cfg.to_json() + "\n");
    s = it->second(Ctx{cfg, out, log});
  } catch (...) {
    // no half-written results; the directory stays usable for a rerun
    std::error_code ec;
    fs::remove_all(out, ec);
    throw;
  }
  s["command"] = name;
  s["config_hash"] = cfg.hash();
  s["output_dir"] = out.string();
  write_text(out / "summary.json", s.dump(2) + "\n");
  return s.dump();
}

}  // namespace hsf
