#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmr/body_model.hpp"
#include "cmr/context.hpp"
#include "cmr/losses.hpp"

namespace cmr {

struct SceneConfig {
  int nPersons = 2;            // 1..4
  double overlapTarget = 0.5;  // pairwise projected-bbox IoU, within +-0.1
  double poseNoise = 0.3;      // radians, per-joint axis-angle stddev
  double shapeScale = 0.5;     // stddev of shape coefficients
  int imageSize = 224;
  std::uint64_t seed = 0;

  void validate() const {
    if (nPersons < 1 || nPersons > 4) throw ConfigError("scene: n_persons must be in 1..4");
    if (overlapTarget < 0 || overlapTarget > 1) throw ConfigError("scene: overlap_target must be in [0,1]");
    if (poseNoise < 0 || shapeScale < 0) throw ConfigError("scene: noise scales must be nonnegative");
    if (imageSize < 32) throw ConfigError("scene: image_size too small");
  }
};

struct SceneInstance {
  BodyParams params;            // ground truth, camera maps model -> image
  Keypoints2D keypoints2d;      // 24-joint layout, pixel coordinates
  PointSet3D joints3d;          // model frame
  Tensor<std::uint8_t> mask;    // [H,W], 255 where this instance is nearest
  Vec2 center;                  // body center, pixels
};

struct Scene {
  TensorF image;  // [3,H,W] flat-shaded silhouettes, per-instance albedo
  std::vector<SceneInstance> instances;
  CenterMap globalMap;
  double achievedIoU = 0;  // max pairwise projected-bbox IoU
  std::string preset;
  std::uint64_t seed = 0;

  int imageSize() const { return image.rank() == 3 ? image.dim(1) : 0; }
};

// Model-space points into the shared scene frame (xy scaled/translated,
// z = s*z + kDepthGauge/s so larger people sit nearer the camera).
PointSet3D placePoints(const PointSet3D& points, const WeakPerspectiveCamera& cam);

// Hard nearest-wins instance labels (-1 background) via per-pixel z-test.
Tensor<std::int32_t> hardInstanceMap(const std::vector<Mesh>& placedMeshes, int height, int width);

// Deterministic synthetic occlusion scene. Throws GenerationError when the
// overlap target cannot be met in 1000 attempts.
Scene generateScene(const SceneConfig& cfg, const BodyModelSpec& spec);

// Stratification presets: target overlap and achieved-IoU bucketing.
double presetOverlapTarget(const std::string& preset);
std::string iouBucket(double iou);

// Dataset directory: images/NNNN.png, masks/NNNN_i.png, annotations/NNNN.json,
// manifest.json with seeds and crc32 checksums. Annotations round-trip
// losslessly; the global centermap is recomputed from stored centers on read.
void writeDataset(const std::vector<Scene>& scenes, const std::string& dir, int toyResolution);
std::vector<Scene> readDataset(const std::string& dir);
int datasetToyResolution(const std::string& dir);

// Training targets for one instance.
InstanceTarget targetFromInstance(const SceneInstance& inst, int imageSize);

}  // namespace cmr
