// Exercises the shared library through hsfruit.h only, and the CLI as a subprocess.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsfruit/hsfruit.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string take(char* s) {
  std::string r = s ? s : "";
  hsf_free_string(s);
  return r;
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hsf_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HSFRUIT_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("status names and error reporting") {
  CHECK(std::string(hsf_status_name(HSF_OK)) == "ok");
  CHECK(std::string(hsf_status_name(HSF_INSUFFICIENT_DATA)) == "insufficient_data");
  hsf_cube* c = nullptr;
  CHECK(hsf_cube_load("/nonexistent/cube.hdr", &c) == HSF_IO);
  CHECK(c == nullptr);
  CHECK(std::string(hsf_last_error()).size() > 0);
  CHECK(hsf_cube_load(nullptr, &c) == HSF_INVALID_ARGUMENT);
  CHECK(std::string(hsf_commands()).find("falsecolor") != std::string::npos);
}

TEST_CASE("config resolution names the bad field") {
  char* out = nullptr;
  const char* ov[] = {"train.max_epochs=4", "category=sweetness"};
  REQUIRE(hsf_config_resolve("{}", ov, 2, &out) == HSF_OK);
  const auto j = json::parse(take(out));
  CHECK(j["train"]["max_epochs"] == 4);
  CHECK(j["category"] == "sweetness");

  const char* bad[] = {"train.nope=1"};
  CHECK(hsf_config_resolve("{}", bad, 1, &out) == HSF_INVALID_ARGUMENT);
  CHECK(std::string(hsf_last_error()).find("train.nope") != std::string::npos);

  char* h1 = nullptr;
  char* h2 = nullptr;
  REQUIRE(hsf_config_hash(R"({"seed": 1})", &h1) == HSF_OK);
  REQUIRE(hsf_config_hash(R"({"seed": 1, "output_dir": "x"})", &h2) == HSF_OK);
  CHECK(take(h1) == take(h2));
}

TEST_CASE("cube handles round trip through disk") {
  const fs::path dir = fresh("cube");
  const double wl[3] = {500.0, 600.0, 700.0};
  std::vector<float> data(2 * 4 * 3);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = 0.01f * static_cast<float>(i);
  hsf_cube* c = nullptr;
  REQUIRE(hsf_cube_create(2, 4, 3, wl, data.data(), &c) == HSF_OK);
  REQUIRE(hsf_cube_save(c, (dir / "c").c_str()) == HSF_OK);
  hsf_cube* d = nullptr;
  REQUIRE(hsf_cube_load((dir / "c.hdr").c_str(), &d) == HSF_OK);
  int h = 0, w = 0, b = 0;
  REQUIRE(hsf_cube_shape(d, &h, &w, &b) == HSF_OK);
  CHECK(h == 2);
  CHECK(w == 4);
  CHECK(b == 3);
  CHECK(std::equal(data.begin(), data.end(), hsf_cube_data(d)));
  CHECK(hsf_cube_wavelengths(d)[2] == doctest::Approx(700.0));
  const double bad_wl[3] = {500.0, 400.0, 700.0};
  hsf_cube* e = nullptr;
  CHECK(hsf_cube_create(2, 4, 3, bad_wl, data.data(), &e) != HSF_OK);
  hsf_cube_free(c);
  hsf_cube_free(d);
  fs::remove_all(dir);
}

TEST_CASE("run commands and use the trained model through handles") {
  hsf_init_runtime();
  const fs::path dir = fresh("run");
  json cfg = {{"output_dir", (dir / "syn").string()}, {"synth", {{"n", 24}, {"size", 12}}}};
  char* summary = nullptr;
  int lines = 0;
  auto counter = [](const char*, void* u) { ++*static_cast<int*>(u); };
  REQUIRE(hsf_run_command("synth", cfg.dump().c_str(), counter, &lines, &summary) == HSF_OK);
  CHECK(json::parse(take(summary))["records"] == 24);
  CHECK(lines > 0);

  cfg = {{"data_root", (dir / "syn").string()},
         {"output_dir", (dir / "train").string()},
         {"category", "ripeness"},
         {"train", {{"max_epochs", 2}}}};
  REQUIRE(hsf_run_command("train", cfg.dump().c_str(), nullptr, nullptr, nullptr) == HSF_OK);
  CHECK(hsf_run_command("train", cfg.dump().c_str(), nullptr, nullptr, nullptr) == HSF_IO);

  hsf_model* m = nullptr;
  REQUIRE(hsf_model_load((dir / "train" / "model.ckpt").c_str(), &m) == HSF_OK);
  char* info = nullptr;
  REQUIRE(hsf_model_info(m, &info) == HSF_OK);
  CHECK(json::parse(take(info))["reduction"] == "full");
  hsf_cube* c = nullptr;
  REQUIRE(hsf_cube_load((dir / "syn" / "synth_00000.hdr").c_str(), &c) == HSF_OK);
  double p[3] = {0, 0, 0};
  int pred = -1;
  REQUIRE(hsf_model_predict(m, c, p, 3, &pred) == HSF_OK);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  CHECK(pred >= 0);
  CHECK(pred < 3);
  CHECK(hsf_model_predict(m, c, p, 2, &pred) == HSF_OUT_OF_RANGE);
  hsf_cube_free(c);
  hsf_model_free(m);
  CHECK(hsf_run_command("nope", cfg.dump().c_str(), nullptr, nullptr, nullptr) == HSF_INVALID_ARGUMENT);
  fs::remove_all(dir);
}

TEST_CASE("bundle render through handles") {
  const fs::path dir = fresh("bundle");
  json cfg = {{"output_dir", (dir / "syn").string()}, {"synth", {{"n", 60}, {"size", 32}}}};
  REQUIRE(hsf_run_command("synth", cfg.dump().c_str(), nullptr, nullptr, nullptr) == HSF_OK);
  cfg = {{"data_root", (dir / "syn").string()},
         {"output_dir", (dir / "fc").string()},
         {"category", "ripeness"},
         {"train", {{"max_epochs", 2}}},
         {"falsecolor", {{"autoencoder_epochs", 2}}}};
  char* s = nullptr;
  REQUIRE(hsf_run_command("falsecolor", cfg.dump().c_str(), nullptr, nullptr, &s) == HSF_OK);
  CHECK(json::parse(take(s))["stage"] == "classification_tuned");
  hsf_bundle* b = nullptr;
  REQUIRE(hsf_bundle_load((dir / "fc" / "bundle.bin").c_str(), &b) == HSF_OK);
  hsf_cube* c = nullptr;
  REQUIRE(hsf_cube_load((dir / "syn" / "synth_00003.hdr").c_str(), &c) == HSF_OK);
  std::vector<float> rgb(32 * 32 * 3, -1.0f);
  char* warning = nullptr;
  REQUIRE(hsf_bundle_render(b, c, rgb.data(), rgb.size(), &warning) == HSF_OK);
  CHECK(warning == nullptr);
  for (float v : rgb) CHECK((v >= 0.0f && v <= 1.0f));
  CHECK(rgb[0] == 0.0f);  // corner is background
  CHECK(hsf_bundle_render(b, c, rgb.data(), 10, nullptr) == HSF_OUT_OF_RANGE);
  REQUIRE(hsf_write_png(rgb.data(), 32, 32, (dir / "x.png").c_str()) == HSF_OK);
  CHECK(fs::file_size(dir / "x.png") > 0);
  hsf_cube_free(c);
  hsf_bundle_free(b);
  fs::remove_all(dir);
}

TEST_CASE("cli: synth, train, evaluate, ablate, bad config") {
  const fs::path dir = fresh("cli");
  const fs::path log = dir / "log.txt";
  const std::string root = "--data-root " + (dir / "syn").string() + " ";
  REQUIRE(cli("synth -q -o " + (dir / "syn").string() + " --set synth.n=30 --set synth.size=12", log) == 0);

  {
    std::ofstream f(dir / "cfg.json");
    f << R"({"category": "ripeness", "train": {"max_epochs": 2}})";
  }
  const std::string conf = "-c " + (dir / "cfg.json").string() + " ";
  REQUIRE(cli("train -q " + conf + root + "-o " + (dir / "tr").string(), log) == 0);
  const std::string ck = "--checkpoint " + (dir / "tr" / "model.ckpt").string() + " ";
  REQUIRE(cli("evaluate -q " + conf + root + ck + "-o " + (dir / "ev").string(), log) == 0);
  const auto ev = json::parse(slurp(dir / "ev" / "eval_report.json"));
  CHECK(ev.contains("accuracy"));
  CHECK(ev["config_hash"].is_string());

  // views=1 matches plain evaluation
  REQUIRE(cli("evaluate -q " + conf + root + ck + "--views 1 -o " + (dir / "v1").string(), log) == 0);
  REQUIRE(cli("evaluate -q " + conf + root + ck + "--plain -o " + (dir / "v0").string(), log) == 0);
  auto a = json::parse(slurp(dir / "v1" / "eval_report.json"));
  auto b = json::parse(slurp(dir / "v0" / "eval_report.json"));
  for (auto* j : {&a, &b}) {
    j->erase("config_hash");
    j->erase("tta_views");
  }
  CHECK(a == b);

  // the data root can come from the environment
  ::setenv("HSFRUIT_DATA_ROOT", (dir / "syn").c_str(), 1);
  REQUIRE(cli("evaluate -q " + conf + ck + "-o " + (dir / "env").string(), log) == 0);
  CHECK(slurp(dir / "env" / "eval_report.json") == slurp(dir / "ev" / "eval_report.json"));
  ::unsetenv("HSFRUIT_DATA_ROOT");

  // reruns are bitwise identical
  REQUIRE(cli("train -q " + conf + root + "-o " + (dir / "tr2").string(), log) == 0);
  CHECK(slurp(dir / "tr" / "train_report.json") == slurp(dir / "tr2" / "train_report.json"));

  REQUIRE(cli("ablate -q " + conf + root + "--set ablate.seeds=[0] --set train.max_epochs=1 -o " +
                  (dir / "ab").string(),
              log) == 0);
  const auto ab = json::parse(slurp(dir / "ab" / "ablation.json"));
  CHECK(ab["rows"].size() == 2);

  CHECK(cli("train -q " + conf + root + "--set train.learning_rat=1 -o " + (dir / "bad").string(), log) != 0);
  CHECK(slurp(log).find("train.learning_rat") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "bad"));

  // write-once output
  CHECK(cli("train -q " + conf + root + "-o " + (dir / "tr").string(), log) != 0);
  CHECK(slurp(log).find("write-once") != std::string::npos);
  fs::remove_all(dir);
}
