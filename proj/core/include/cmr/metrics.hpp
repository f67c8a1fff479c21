#pragma once

#include <array>
#include <vector>

#include "cmr/body_model.hpp"
#include "cmr/context.hpp"
#include "cmr/geometry.hpp"

namespace cmr {

// Standard 17-keypoint OKS sigmas (nose, eyes, ears, shoulders, elbows,
// wrists, hips, knees, ankles).
inline constexpr std::array<double, kNumKeypoints17> kOksSigmas = {
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089};

inline std::vector<double> oksThresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

// Joint errors in millimeters. MPJPE aligns both sets at the pelvis joint
// (index kPelvis in the 24-joint layout); PMPJPE applies closed-form
// similarity alignment first.
double mpjpe(const PointSet3D& pred, const PointSet3D& gt, int rootIndex = kPelvis);
double pmpjpe(const PointSet3D& pred, const PointSet3D& gt);

// Mean per-vertex error (mm) after aligning the given root positions
// (typically the pelvis joint of each mesh).
double pve(const Mesh& predMesh, const Mesh& gtMesh, const Vec3& predRoot, const Vec3& gtRoot);

// Object keypoint similarity over ground-truth-visible keypoints.
double oks(const Keypoints2D& pred, const Keypoints2D& gt, double area,
           const std::array<double, kNumKeypoints17>& sigmas = kOksSigmas);

struct DetectionInstance {
  Keypoints2D keypoints;  // 17-keypoint layout, pixel coordinates
  double score = 1.0;
};

struct GtInstance {
  Keypoints2D keypoints;
  double area = 0.0;  // instance segmentation area in pixels
};

struct KeypointEvalImage {
  std::vector<DetectionInstance> preds;
  std::vector<GtInstance> gts;
};

struct ApResult {
  double ap = -1, ap50 = -1, ap75 = -1;
  double apMedium = -1, apLarge = -1;  // -1 when the size bucket is empty
  double ar = -1;
};

// COCO-style keypoint AP/AR: greedy score-ordered matching per image at each
// OKS threshold, 101-point interpolated precision, size buckets by GT area.
ApResult averagePrecision(const std::vector<KeypointEvalImage>& images,
                          const std::vector<double>& thresholds = oksThresholds());

// Per-instance bookkeeping carried through evaluation; matched pairs are
// one-to-one by construction.
struct EvalRecord {
  PointSet3D predJoints, gtJoints;
  PointSet3D predVerts, gtVerts;
  Keypoints2D predKeypoints17, gtKeypoints17;
  double gtArea = 0;
  double score = 1.0;
  bool matched = true;
};

}  // namespace cmr
