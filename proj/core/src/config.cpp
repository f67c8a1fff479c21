#include "cmr/config.hpp"

#include <fstream>
#include <sstream>

#include "cmr/rng.hpp"
#include "json.hpp"

using nlohmann::json;

namespace cmr {

namespace {

json toJsonObj(const RunConfig& c) {
  json j;
  j["model"] = {{"toy_resolution", c.model.toyResolution}, {"archive_path", c.model.archivePath}};
  j["conditioning"] = {{"fusion", toString(c.conditioning.fusion)},
                       {"insertions", c.conditioning.insertions},
                       {"latent_dim", c.conditioning.latentDim},
                       {"context", toString(c.conditioning.context)},
                       {"widths", c.conditioning.widths},
                       {"strides", c.conditioning.strides},
                       {"input_size", c.conditioning.inputSize},
                       {"head_hidden", c.conditioning.headHidden},
                       {"head_iterations", c.conditioning.headIterations},
                       {"mean_camera_scale", c.conditioning.meanCameraScale}};
  j["losses"] = {{"single", c.losses.single},     {"collision", c.losses.collision}, {"depth", c.losses.depth},
                 {"kp2d", c.losses.kp2d},         {"joints3d", c.losses.joints3d},   {"pose_param", c.losses.poseParam},
                 {"shape_param", c.losses.shapeParam}};
  j["raster"] = {{"height", c.raster.height},
                 {"width", c.raster.width},
                 {"sharpness", c.raster.sharpness},
                 {"coverage_cut", c.raster.coverageCut}};
  j["sdf_resolution"] = c.sdfResolution;
  j["center_sigma"] = c.centerSigma;
  j["peak_threshold"] = c.peakThreshold;
  j["data"] = {{"scenes_per_preset", c.data.scenesPerPreset}, {"presets", c.data.presets},
               {"n_persons", c.data.nPersons},                {"pose_noise", c.data.poseNoise},
               {"shape_scale", c.data.shapeScale},            {"image_size", c.data.imageSize}};
  j["train"] = {{"steps", c.train.steps},
                {"batch_scenes", c.train.batchScenes},
                {"lr", c.train.lr},
                {"seed", c.train.seed},
                {"train_context", c.train.trainContext},
                {"log_every", c.train.logEvery},
                {"threads", c.train.threads},
                {"val_fraction", c.train.valFraction}};
  return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig fromJsonObj(const json& j) {
  RunConfig c;
  if (j.contains("model")) {
    maybe(j["model"], "toy_resolution", c.model.toyResolution);
    maybe(j["model"], "archive_path", c.model.archivePath);
  }
  if (j.contains("conditioning")) {
    const json& q = j["conditioning"];
    if (q.contains("fusion")) c.conditioning.fusion = fusionModeFromString(q["fusion"].get<std::string>());
    maybe(q, "insertions", c.conditioning.insertions);
    maybe(q, "latent_dim", c.conditioning.latentDim);
    if (q.contains("context")) c.conditioning.context = contextModeFromString(q["context"].get<std::string>());
    maybe(q, "widths", c.conditioning.widths);
    maybe(q, "strides", c.conditioning.strides);
    maybe(q, "input_size", c.conditioning.inputSize);
    maybe(q, "head_hidden", c.conditioning.headHidden);
    maybe(q, "head_iterations", c.conditioning.headIterations);
    maybe(q, "mean_camera_scale", c.conditioning.meanCameraScale);
  }
  if (j.contains("losses")) {
    const json& q = j["losses"];
    maybe(q, "single", c.losses.single);
    maybe(q, "collision", c.losses.collision);
    maybe(q, "depth", c.losses.depth);
    maybe(q, "kp2d", c.losses.kp2d);
    maybe(q, "joints3d", c.losses.joints3d);
    maybe(q, "pose_param", c.losses.poseParam);
    maybe(q, "shape_param", c.losses.shapeParam);
  }
  if (j.contains("raster")) {
    const json& q = j["raster"];
    maybe(q, "height", c.raster.height);
    maybe(q, "width", c.raster.width);
    maybe(q, "sharpness", c.raster.sharpness);
    maybe(q, "coverage_cut", c.raster.coverageCut);
  }
  maybe(j, "sdf_resolution", c.sdfResolution);
  maybe(j, "center_sigma", c.centerSigma);
  maybe(j, "peak_threshold", c.peakThreshold);
  if (j.contains("data")) {
    const json& q = j["data"];
    maybe(q, "scenes_per_preset", c.data.scenesPerPreset);
    maybe(q, "presets", c.data.presets);
    maybe(q, "n_persons", c.data.nPersons);
    maybe(q, "pose_noise", c.data.poseNoise);
    maybe(q, "shape_scale", c.data.shapeScale);
    maybe(q, "image_size", c.data.imageSize);
  }
  if (j.contains("train")) {
    const json& q = j["train"];
    maybe(q, "steps", c.train.steps);
    maybe(q, "batch_scenes", c.train.batchScenes);
    maybe(q, "lr", c.train.lr);
    maybe(q, "seed", c.train.seed);
    maybe(q, "train_context", c.train.trainContext);
    maybe(q, "log_every", c.train.logEvery);
    maybe(q, "threads", c.train.threads);
    maybe(q, "val_fraction", c.train.valFraction);
  }
  return c;
}

}  // namespace

void RunConfig::validate() const {
  conditioning.validate();
  if (!losses.valid()) throw ConfigError("config: loss weights must be nonnegative");
  if (sdfResolution < 8) throw ConfigError("config: sdf_resolution must be >= 8");
  if (!(peakThreshold > 0 && peakThreshold < 1)) throw ConfigError("config: peak_threshold must be in (0,1)");
  if (centerSigma <= 0) throw ConfigError("config: center_sigma must be positive");
  if (train.steps < 0 || train.batchScenes < 1) throw ConfigError("config: bad training schedule");
  if (train.lr <= 0) throw ConfigError("config: learning rate must be positive");
  if (train.threads < 1) throw ConfigError("config: train.threads must be >= 1");
  if (train.valFraction < 0 || train.valFraction >= 1) throw ConfigError("config: val_fraction must be in [0,1)");
  if (data.nPersons < 1 || data.nPersons > 4) throw ConfigError("config: data.n_persons must be in 1..4");
  if (data.imageSize != conditioning.inputSize)
    throw ConfigError("config: data.image_size must match conditioning.input_size");
  for (const std::string& p : data.presets) presetOverlapTarget(p);  // throws on unknown names
  if (model.toyResolution < 1) throw ConfigError("config: model.toy_resolution must be >= 1");
}

std::string RunConfig::toJson(int indent) const { return toJsonObj(*this).dump(indent); }

RunConfig RunConfig::fromJsonText(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config: invalid JSON: " + std::string(e.what()));
  }
  try {
    return fromJsonObj(j);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }
}

RunConfig RunConfig::loadFile(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return fromJsonText(ss.str());
}

void RunConfig::applyOverride(const std::string& keyEqualsValue) {
  auto eq = keyEqualsValue.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + keyEqualsValue + "' must be key.path=value");
  std::string key = keyEqualsValue.substr(0, eq);
  std::string value = keyEqualsValue.substr(eq + 1);

  json root = toJsonObj(*this);
  json* node = &root;
  std::size_t pos = 0;
  while (true) {
    auto dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (dot == std::string::npos) {
      json parsed;
      try {
        parsed = json::parse(value);
      } catch (const json::exception&) {
        parsed = value;  // plain string
      }
      (*node)[part] = parsed;
      break;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
  *this = fromJsonObj(root);
}

std::uint64_t RunConfig::hash() const { return fnv1a(toJsonObj(*this).dump()); }

std::string RunConfig::hashHex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

}  // namespace cmr
