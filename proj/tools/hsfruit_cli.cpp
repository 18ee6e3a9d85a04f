// Command-line front end. Talks to the library only through hsfruit.h.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hsfruit/hsfruit.h"

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string data_root, out, manifest, split, category, reduction, checkpoint, camera, fruit;
  long long seed = -1;
  int views = -1;
  bool plain = false;
  bool overwrite = false;
  bool print_config = false;
  bool quiet = false;
};

std::string owned(char* s) {
  std::string r = s ? s : "";
  hsf_free_string(s);
  return r;
}

int report_error(hsf_status st, const std::string& context) {
  std::cerr << "error (" << hsf_status_name(st) << "): " << context << hsf_last_error() << "\n";
  return static_cast<int>(st) == 0 ? 1 : std::min(static_cast<int>(st), 125);
}

void log_line(const char* line, void* user) {
  if (!*static_cast<bool*>(user)) std::cerr << line << "\n";
}

void print_summary(const std::string& verb, const nlohmann::json& s) {
  std::cout << verb << ": done, outputs in " << s.value("output_dir", "?") << "\n";
  for (const char* k : {"accuracy", "tta_views", "records", "count", "best_val_accuracy", "best_epoch", "parameters",
                        "completeness_gap", "peak_wavelength_nm", "stage", "axis", "present"})
    if (s.contains(k)) std::cout << "  " << k << ": " << s[k].dump() << "\n";
  if (s.contains("rows"))
    for (const auto& r : s["rows"])
      std::cout << "  " << r.value("value", "") << ": mean accuracy " << r.value("mean_accuracy", 0.0) << "\n";
  if (s.contains("warning")) std::cout << "  warning: " << s["warning"].get<std::string>() << "\n";
  std::cout << "  config hash: " << s.value("config_hash", "") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  hsf_init_runtime();
  CLI::App app{"Hyperspectral fruit ripeness pipeline"};
  app.require_subcommand(1, 1);
  Common c;

  const char* env_root = std::getenv("HSFRUIT_DATA_ROOT");
  std::vector<CLI::App*> subs;
  for (std::istringstream is(hsf_commands()); !is.eof();) {
    std::string verb;
    is >> verb;
    if (verb.empty()) continue;
    auto* sub = app.add_subcommand(verb);
    sub->add_option("-c,--config", c.config_file, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", c.sets, "override, dotted.key=value (repeatable)");
    sub->add_option("--data-root", c.data_root, "root for relative paths (default $HSFRUIT_DATA_ROOT)");
    sub->add_option("-o,--out", c.out, "output directory (must be new or empty)");
    sub->add_option("--manifest", c.manifest, "manifest CSV");
    sub->add_option("--split", c.split, "split file from the split command");
    sub->add_option("--category", c.category, "firmness | sweetness | ripeness");
    sub->add_option("--reduction", c.reduction, "full | rgb | pca5");
    sub->add_option("--checkpoint", c.checkpoint, "trained model");
    sub->add_option("--camera", c.camera, "only records from this camera");
    sub->add_option("--fruit", c.fruit, "only records of this fruit");
    sub->add_option("--seed", c.seed, "seed");
    sub->add_option("--views", c.views, "test-time augmentation views (0 = plain)");
    sub->add_flag("--plain", c.plain, "evaluate without augmentation");
    sub->add_flag("--overwrite", c.overwrite, "replace a non-empty output directory");
    sub->add_flag("--print-config", c.print_config, "print the resolved config and exit");
    sub->add_flag("-q,--quiet", c.quiet, "no progress output");
    subs.push_back(sub);
  }
  CLI11_PARSE(app, argc, argv);
  const std::string verb = app.get_subcommands().front()->get_name();

  std::string text;
  if (!c.config_file.empty()) {
    std::ifstream f(c.config_file);
    std::ostringstream os;
    os << f.rdbuf();
    text = os.str();
  }
  std::vector<std::string> ov;
  const auto str = [](const std::string& v) { return nlohmann::json(v).dump(); };
  if (!c.data_root.empty()) ov.push_back("data_root=" + str(c.data_root));
  else if (env_root && *env_root && text.find("\"data_root\"") == std::string::npos)
    ov.push_back("data_root=" + str(env_root));
  if (!c.out.empty()) ov.push_back("output_dir=" + str(c.out));
  if (!c.manifest.empty()) ov.push_back("manifest=" + str(c.manifest));
  if (!c.split.empty()) ov.push_back("split_file=" + str(c.split));
  if (!c.category.empty()) ov.push_back("category=" + str(c.category));
  if (!c.reduction.empty()) ov.push_back("reduction=" + str(c.reduction));
  if (!c.checkpoint.empty()) ov.push_back("checkpoint=" + str(c.checkpoint));
  if (!c.camera.empty()) ov.push_back("camera=" + str(c.camera));
  if (!c.fruit.empty()) ov.push_back("fruit=" + str(c.fruit));
  if (c.seed >= 0) ov.push_back("seed=" + std::to_string(c.seed));
  if (c.views >= 0) ov.push_back("tta_views=" + std::to_string(c.views));
  if (c.plain) ov.push_back("tta_views=0");
  if (c.overwrite) ov.push_back("overwrite=true");
  ov.insert(ov.end(), c.sets.begin(), c.sets.end());

  std::vector<const char*> ptrs;
  for (const auto& o : ov) ptrs.push_back(o.c_str());
  char* resolved = nullptr;
  hsf_status st = hsf_config_resolve(text.c_str(), ptrs.data(), ptrs.size(), &resolved);
  if (st != HSF_OK) return report_error(st, "invalid config: ");
  const std::string cfg = owned(resolved);
  if (c.print_config) {
    std::cout << cfg << "\n";
    return 0;
  }

  char* summary = nullptr;
  st = hsf_run_command(verb.c_str(), cfg.c_str(), log_line, &c.quiet, &summary);
  if (st != HSF_OK) return report_error(st, verb + " failed: ");
  print_summary(verb, nlohmann::json::parse(owned(summary)));
  return 0;
}
