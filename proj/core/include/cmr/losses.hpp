#pragma once

#include <optional>
#include <vector>

#include "cmr/body_model.hpp"
#include "cmr/context.hpp"
#include "cmr/fields.hpp"
#include "cmr/geometry.hpp"

namespace cmr {

// Minimum visible 2D keypoints for an instance to count toward the
// single-person loss average.
inline constexpr int kMinVisibleKeypoints = 5;

// Scene-frame z offset constant: a person with image scale s sits at depth
// s*z + kDepthGauge/s, so larger (closer) people render in front.
inline constexpr double kDepthGauge = 1.0;

struct LossWeights {
  double single = 1.0;
  double collision = 0.2;
  double depth = 0.4;
  // Inner weights of the per-instance loss (2D, 3D, pose, shape); these are
  // config-exposed balance knobs, not contract values.
  double kp2d = 5.0;
  double joints3d = 5.0;
  double poseParam = 1.0;
  double shapeParam = 0.001;

  bool valid() const {
    return single >= 0 && collision >= 0 && depth >= 0 && kp2d >= 0 && joints3d >= 0 && poseParam >= 0 &&
           shapeParam >= 0;
  }
};

struct InstanceTarget {
  std::optional<BodyParams> params;
  Keypoints2D keypoints2d;              // pixel coordinates, 24-joint layout
  std::optional<PointSet3D> joints3d;   // model units
  int imageWidth = 224, imageHeight = 224;

  bool hasSupervision() const { return params.has_value() || joints3d.has_value() || keypoints2d.count() > 0; }
};

// --- plain (value-only) API ---------------------------------------------------

double lossInstance(const BodyParams& pred, const InstanceTarget& target, const BodyModelSpec& spec,
                    const LossWeights& w = {});

double lossSingle(const std::vector<BodyParams>& preds, const std::vector<InstanceTarget>& targets,
                  const BodyModelSpec& spec, const LossWeights& w = {});

// Pairwise interpenetration: sum over ordered pairs (i,j), i != j, of the
// modified SDF of mesh i sampled at mesh j's vertices.
double lossCollision(const std::vector<Mesh>& meshes, int resolution = kDefaultSdfResolution);

// Depth ordering vs. ground-truth instance masks at rasterizer resolution
// (labels: -1 background, else instance index). softplus(d_i - d_j) averaged
// over pixels whose most-visible instance disagrees with the mask while both
// contenders are rendered there.
double lossDepth(const std::vector<Mesh>& meshes, const WeakPerspectiveCamera& cam,
                 const Tensor<std::int32_t>& maskLabels, const RasterConfig& cfg);

double totalLoss(double single, double collision, double depth, const LossWeights& w = {});

// --- autodiff graph builders ---------------------------------------------------

namespace ops {

template <typename T>
struct PredVars {
  ad::Var<T> pose6d;  // [24,6]
  ad::Var<T> shape;   // [10]
  ad::Var<T> cam;     // [3] = (s, t_x, t_y)
};

// Builds the per-instance loss subgraph; also exposes the body-forward
// results so callers can reuse them (e.g. for scene placement).
template <typename T>
struct InstanceLossResult {
  ad::Var<T> loss;
  ad::Var<T> verts;   // [V,3] model frame
  ad::Var<T> joints;  // [24,3]
};

template <typename T>
InstanceLossResult<T> lossInstanceVar(const PredVars<T>& pred, const InstanceTarget& target,
                                      const BodyModelSpec& spec, const LossWeights& w);

// Frozen-field collision core: fields are precomputed outside the tape, so
// gradients flow only through the sampled vertex positions.
template <typename T>
ad::Var<T> lossCollisionFrozen(const std::vector<ad::Var<T>>& sceneVerts, const std::vector<const SDFGrid*>& grids);

// Full collision loss: rebuilds detached fields from the current vertex
// values, then applies the frozen core.
template <typename T>
ad::Var<T> lossCollisionVar(const std::vector<ad::Var<T>>& sceneVerts,
                            const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>& faces, int resolution,
                            std::vector<SDFGrid>* gridStorage);

template <typename T>
ad::Var<T> lossDepthVar(const std::vector<ad::Var<T>>& sceneVerts,
                        const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>& faces,
                        const Tensor<std::int32_t>& maskLabels, const RasterConfig& cfg);

}  // namespace ops
}  // namespace cmr
