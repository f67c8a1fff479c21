#pragma once

#include <Eigen/Core>
#include <array>
#include <string>
#include <vector>

#include "cmr/autodiff.hpp"
#include "cmr/geometry.hpp"

namespace cmr {

inline constexpr int kNumJoints = 24;
inline constexpr int kPelvis = 0;
inline constexpr int kNumShape = 10;
inline constexpr int kNumKeypoints17 = 17;

// Kinematic tree (root = pelvis, parent index -1). Topologically sorted:
// parents[j] < j for every non-root joint.
inline constexpr std::array<int, kNumJoints> kParents = {-1, 0, 0,  0,  1,  2,  3,  4,  5,  6,  7,  8,
                                                         9,  9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};

inline const std::array<const char*, kNumJoints> kJointNames = {
    "pelvis",     "left_hip",      "right_hip",      "spine1",     "left_knee",  "right_knee",
    "spine2",     "left_ankle",    "right_ankle",    "spine3",     "left_foot",  "right_foot",
    "neck",       "left_collar",   "right_collar",   "head",       "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",   "left_wrist",     "right_wrist", "left_hand", "right_hand"};

// Torso joints defining the body center: neck, shoulders, pelvis, hips.
inline constexpr std::array<int, 6> kTorsoJoints = {12, 16, 17, 0, 1, 2};

// Fixed selection from the 24-joint layout to a COCO-style 17-keypoint layout
// (nose/eyes/ears all map to the head joint in the toy body).
inline constexpr std::array<int, kNumKeypoints17> kKeypoint17FromJoint = {
    15, 15, 15, 15, 15,  // nose, eyes, ears -> head
    16, 17,              // shoulders
    18, 19,              // elbows
    20, 21,              // wrists
    1,  2,               // hips
    4,  5,               // knees
    7,  8};              // ankles

struct Mesh {
  PointSet3D vertices;                                  // V x 3, model units (meters)
  Eigen::Matrix<int, Eigen::Dynamic, 3> faces;          // F x 3, outward-oriented
};

// Template + shape blendshapes + kinematic chain + skinning weights.
// Immutable after construction; shareable across threads.
struct BodyModelSpec {
  PointSet3D templateVertices;                          // V x 3
  Eigen::Matrix<int, Eigen::Dynamic, 3> faces;          // F x 3
  Eigen::MatrixXd shapeBasis;                           // (3V) x 10, flattened per-vertex xyz
  Eigen::MatrixXd jointRegressor;                       // 24 x V, rows sum to 1
  std::array<int, kNumJoints> parents = kParents;
  Eigen::MatrixXd skinningWeights;                      // V x 24, rows sum to 1, nonnegative

  int numVertices() const { return static_cast<int>(templateVertices.rows()); }
  int numFaces() const { return static_cast<int>(faces.rows()); }

  // Throws SchemaError naming the offending field.
  void validate() const;
};

struct BodyParams {
  Eigen::Matrix<double, kNumJoints, 6, Eigen::RowMajor> pose;  // 6D per joint, row 0 = root
  Eigen::Matrix<double, kNumShape, 1> shape;
  WeakPerspectiveCamera camera;

  static BodyParams neutral();

  // Flat packing [pose(144), shape(10), s, t_x, t_y] used by the regressor head
  // and checkpoint/annotation serialization.
  static constexpr int kDim = kNumJoints * 6 + kNumShape + 3;
  Eigen::VectorXd toVector() const;
  static BodyParams fromVector(const Eigen::VectorXd& v);

  bool allFinite() const { return pose.allFinite() && shape.allFinite() && camera.valid(); }
};

struct BodyForwardResult {
  Mesh mesh;
  PointSet3D joints;  // 24 x 3
};

// Linear blend skinning forward pass: shape blendshapes, regressed rest
// joints, forward kinematics, skinning. Differentiable in pose and shape via
// the ops::bodyForward tape binding below.
BodyForwardResult bodyForward(const BodyModelSpec& spec, const BodyParams& params);

// Procedural license-free humanoid: capsule limbs, box torso and head, with
// the 24-joint kinematic tree above. Deterministic for a fixed resolution.
BodyModelSpec makeToyModel(int resolution = 1);

// Model archive round-trip (format documented in docs/formats.md).
BodyModelSpec loadModel(const std::string& path);
void saveModel(const std::string& path, const BodyModelSpec& spec);

// 17-keypoint selection from 24 joints (works on 3D joints or 2D projections).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, kNumKeypoints17, Derived::ColsAtCompileTime> selectKeypoints17(
    const Eigen::MatrixBase<Derived>& joints) {
  Eigen::Matrix<typename Derived::Scalar, kNumKeypoints17, Derived::ColsAtCompileTime> out(kNumKeypoints17,
                                                                                           joints.cols());
  for (int k = 0; k < kNumKeypoints17; ++k) out.row(k) = joints.row(kKeypoint17FromJoint[k]);
  return out;
}

namespace kernels {

// rotmats: 24 row-major 3x3 matrices; shape: 10 coefficients.
// outVerts: V x 3 row-major, outJoints: 24 x 3 row-major.
template <typename T>
void bodyForwardKernel(const BodyModelSpec& spec, const T* rotmats, const T* shape, T* outVerts, T* outJoints);

// Reverse mode; recomputes intermediates. dVerts/dJoints may be null.
template <typename T>
void bodyForwardBackward(const BodyModelSpec& spec, const T* rotmats, const T* shape, const T* dVerts,
                         const T* dJoints, T* dRotmats, T* dShape);

}  // namespace kernels

namespace ops {

struct BodyVars {
  template <typename T>
  struct Out {
    ad::Var<T> verts;   // [V,3]
    ad::Var<T> joints;  // [24,3]
  };
};

// rotmats: [24,3,3], shape: [10]. Emits one tape node holding verts and
// joints stacked, plus two row-slice views.
template <typename T>
typename BodyVars::Out<T> bodyForward(const BodyModelSpec& spec, ad::Var<T> rotmats, ad::Var<T> shape) {
  ad::Tape<T>& t = *rotmats.tape;
  int V = spec.numVertices();
  Tensor<T> stacked({V + kNumJoints, 3});
  kernels::bodyForwardKernel(spec, rotmats.val().data(), shape.val().data(), stacked.data(),
                             stacked.data() + static_cast<std::size_t>(V) * 3);
  bool rg = rotmats.requiresGrad() || shape.requiresGrad();
  int id = t.push(std::move(stacked), rg);
  if (rg) {
    int ir = rotmats.id, is = shape.id;
    const BodyModelSpec* sp = &spec;
    t.setBack(id, [id, ir, is, sp, V](ad::Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      Tensor<T> dR({kNumJoints, 3, 3});
      Tensor<T> dS({kNumShape});
      kernels::bodyForwardBackward(*sp, tp.val(ir).data(), tp.val(is).data(), g.data(),
                                   g.data() + static_cast<std::size_t>(V) * 3, dR.data(), dS.data());
      if (tp.requiresGrad(ir)) ad::detail::accumulate(tp.grad(ir), dR);
      if (tp.requiresGrad(is)) ad::detail::accumulate(tp.grad(is), dS);
    });
  }
  ad::Var<T> all{&t, id};
  return {ad::sliceRows(all, 0, V), ad::sliceRows(all, V, V + kNumJoints)};
}

}  // namespace ops
}  // namespace cmr
