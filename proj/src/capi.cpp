#include "hsfruit/hsfruit.h"

#include <cstring>
#include <string>

#include <json.hpp>

#include "hsfruit/envi_io.hpp"
#include "hsfruit/falsecolor.hpp"
#include "hsfruit/nn.hpp"
#include "hsfruit/pipeline.hpp"

struct hsf_cube {
  hsf::HyperCube cube;
};
struct hsf_model {
  hsf::TrainedModel m;
};
struct hsf_bundle {
  hsf::EncoderBundle b;
};

namespace {

thread_local std::string g_error;

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <class F>
hsf_status guarded(F&& f) {
  g_error.clear();
  try {
    f();
    return HSF_OK;
  } catch (const hsf::Error& e) {
    g_error = e.what();
    return static_cast<hsf_status>(static_cast<int>(e.code()));
  } catch (const nlohmann::json::exception& e) {
    g_error = std::string("malformed JSON: ") + e.what();
    return HSF_FORMAT;
  } catch (const std::bad_alloc&) {
    g_error = "out of memory";
    return HSF_INTERNAL;
  } catch (const std::exception& e) {
    g_error = e.what();
    return HSF_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) hsf::fail(hsf::ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
}

}  // namespace

extern "C" {

const char* hsf_version(void) { return "1.0.0"; }

const char* hsf_status_name(hsf_status s) {
  switch (s) {
    case HSF_OK: return "ok";
    case HSF_INVALID_ARGUMENT: return "invalid_argument";
    case HSF_SHAPE_MISMATCH: return "shape_mismatch";
    case HSF_OUT_OF_RANGE: return "out_of_range";
    case HSF_IO: return "io";
    case HSF_MISSING_HEADER_KEY: return "missing_header_key";
    case HSF_PAYLOAD_SIZE: return "payload_size";
    case HSF_UNKNOWN_INTERLEAVE: return "unknown_interleave";
    case HSF_FORMAT: return "format";
    case HSF_NO_VISIBLE_BAND: return "no_visible_band";
    case HSF_EMPTY_MASK: return "empty_mask";
    case HSF_SINGLE_CLASS: return "single_class";
    case HSF_INSUFFICIENT_DATA: return "insufficient_data";
    case HSF_STATE: return "state";
    case HSF_NUMERICAL: return "numerical";
    case HSF_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* hsf_last_error(void) { return g_error.c_str(); }

void hsf_free_string(char* s) { std::free(s); }

void hsf_init_runtime(void) { hsf::nn::keep_large_allocations(); }

const char* hsf_commands(void) {
  static const std::string list = [] {
    std::string s;
    for (const auto& c : hsf::pipeline_commands()) s += (s.empty() ? "" : " ") + c;
    return s;
  }();
  return list.c_str();
}

hsf_status hsf_config_resolve(const char* config_json, const char* const* overrides, size_t n_overrides,
                              char** resolved_json) {
  return guarded([&] {
    need(resolved_json, "resolved_json");
    if (n_overrides) need(overrides, "overrides");
    std::vector<std::string> ov(overrides, overrides + n_overrides);
    const auto merged = hsf::apply_overrides(config_json ? config_json : "", ov);
    *resolved_json = dup(hsf::PipelineConfig::from_json(merged).to_json());
  });
}

hsf_status hsf_config_hash(const char* config_json, char** hash) {
  return guarded([&] {
    need(config_json, "config_json");
    need(hash, "hash");
    *hash = dup(hsf::PipelineConfig::from_json(config_json).hash());
  });
}

hsf_status hsf_run_command(const char* command, const char* config_json, hsf_log_fn log, void* user,
                           char** summary_json) {
  return guarded([&] {
    need(command, "command");
    need(config_json, "config_json");
    const auto cfg = hsf::PipelineConfig::from_json(config_json);
    hsf::GridLog fn;
    if (log) fn = [log, user](const std::string& line) { log(line.c_str(), user); };
    const auto s = hsf::run_command(command, cfg, fn);
    if (summary_json) *summary_json = dup(s);
  });
}

hsf_status hsf_cube_load(const char* path, hsf_cube** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new hsf_cube{hsf::load_hypercube(path)};
  });
}

hsf_status hsf_cube_create(int height, int width, int bands, const double* wavelengths_nm, const float* data,
                           hsf_cube** out) {
  return guarded([&] {
    need(wavelengths_nm, "wavelengths_nm");
    need(data, "data");
    need(out, "out");
    if (height < 1 || width < 1 || bands < 1) hsf::fail(hsf::ErrorCode::kInvalidArgument, "non-positive cube shape");
    hsf::WavelengthAxis axis(std::vector<double>(wavelengths_nm, wavelengths_nm + bands));
    const std::size_t n = static_cast<std::size_t>(height) * width * bands;
    *out = new hsf_cube{hsf::HyperCube(height, width, std::move(axis), std::vector<float>(data, data + n))};
  });
}

void hsf_cube_free(hsf_cube* cube) { delete cube; }

hsf_status hsf_cube_shape(const hsf_cube* cube, int* height, int* width, int* bands) {
  return guarded([&] {
    need(cube, "cube");
    if (height) *height = cube->cube.height();
    if (width) *width = cube->cube.width();
    if (bands) *bands = cube->cube.bands();
  });
}

const float* hsf_cube_data(const hsf_cube* cube) { return cube ? cube->cube.data().data() : nullptr; }

const double* hsf_cube_wavelengths(const hsf_cube* cube) {
  return cube ? cube->cube.axis().values().data() : nullptr;
}

hsf_status hsf_cube_save(const hsf_cube* cube, const char* path) {
  return guarded([&] {
    need(cube, "cube");
    need(path, "path");
    hsf::save_cube(cube->cube, path);
  });
}

hsf_status hsf_model_load(const char* checkpoint, hsf_model** out) {
  return guarded([&] {
    need(checkpoint, "checkpoint");
    need(out, "out");
    *out = new hsf_model{hsf::load_trained_model(checkpoint)};
  });
}

void hsf_model_free(hsf_model* model) { delete model; }

hsf_status hsf_model_info(const hsf_model* model, char** info_json) {
  return guarded([&] {
    need(model, "model");
    need(info_json, "info_json");
    nlohmann::json j;
    j["config"] = nlohmann::json::parse(model->m.model.config().to_json());
    j["reduction"] = hsf::to_string(model->m.reduction);
    j["extra"] = model->m.extra_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(model->m.extra_json);
    j["extra"].erase("pca");
    *info_json = dup(j.dump());
  });
}

hsf_status hsf_model_predict(const hsf_model* model, const hsf_cube* cube, double* probs, size_t n_probs,
                             int* predicted) {
  return guarded([&] {
    need(model, "model");
    need(cube, "cube");
    const auto p = model->m.predict(cube->cube);
    if (probs) {
      if (n_probs < p.size()) hsf::fail(hsf::ErrorCode::kOutOfRange, "probs buffer holds fewer than the class count");
      std::copy(p.begin(), p.end(), probs);
    }
    if (predicted) *predicted = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  });
}

hsf_status hsf_bundle_load(const char* path, hsf_bundle** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new hsf_bundle{hsf::load_bundle(path)};
  });
}

void hsf_bundle_free(hsf_bundle* bundle) { delete bundle; }

hsf_status hsf_bundle_render(const hsf_bundle* bundle, const hsf_cube* cube, float* rgb, size_t n_rgb,
                             char** warning) {
  return guarded([&] {
    need(bundle, "bundle");
    need(cube, "cube");
    need(rgb, "rgb");
    std::string w;
    const auto img = hsf::render_false_color(bundle->b, cube->cube, &w);
    if (n_rgb < img.data.size()) hsf::fail(hsf::ErrorCode::kOutOfRange, "rgb buffer smaller than H*W*3");
    std::copy(img.data.begin(), img.data.end(), rgb);
    if (warning) *warning = w.empty() ? nullptr : dup(w);
  });
}

hsf_status hsf_write_png(const float* rgb, int height, int width, const char* path) {
  return guarded([&] {
    need(rgb, "rgb");
    need(path, "path");
    if (height < 1 || width < 1) hsf::fail(hsf::ErrorCode::kInvalidArgument, "non-positive image shape");
    hsf::RgbImage img(height, width);
    std::copy(rgb, rgb + static_cast<std::size_t>(height) * width * 3, img.data.begin());
    hsf::write_png(img, path);
  });
}

}  // extern "C"
