#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmr/conditioning.hpp"
#include "cmr/fields.hpp"
#include "cmr/losses.hpp"
#include "cmr/synthdata.hpp"

namespace cmr {

struct ModelConfig {
  int toyResolution = 1;
  std::string archivePath;  // optional: load real weights instead of the toy body
};

struct DataConfig {
  int scenesPerPreset = 10;
  std::vector<std::string> presets = {"clear", "occluded", "severe"};
  int nPersons = 2;
  double poseNoise = 0.3;
  double shapeScale = 0.5;
  int imageSize = 224;
};

struct TrainConfig {
  int steps = 1000;
  int batchScenes = 2;
  double lr = 5e-4;
  std::uint64_t seed = 0;
  bool trainContext = false;
  int logEvery = 10;
  int threads = 2;        // scene-parallel workers (deterministic reduction)
  double valFraction = 0.1;  // trailing fraction of the dataset held out for "best"
};

// Full run configuration. Serialized as JSON; a canonical dump is hashed and
// recorded in every artifact.
struct RunConfig {
  ModelConfig model;
  ConditioningConfig conditioning;
  LossWeights losses;
  RasterConfig raster;
  int sdfResolution = kDefaultSdfResolution;
  double centerSigma = kDefaultCenterSigma;
  double peakThreshold = kDefaultPeakThreshold;
  DataConfig data;
  TrainConfig train;

  void validate() const;

  std::string toJson(int indent = 2) const;
  static RunConfig fromJsonText(const std::string& text);
  static RunConfig loadFile(const std::string& path);

  // Dotted-path override, e.g. "conditioning.fusion=early" or
  // "train.steps=200"; values parse as JSON with a string fallback.
  void applyOverride(const std::string& keyEqualsValue);

  std::uint64_t hash() const;
  std::string hashHex() const;
};

}  // namespace cmr
