#pragma once

#include <array>
#include <limits>
#include <vector>

#include "cmr/autodiff.hpp"
#include "cmr/body_model.hpp"
#include "cmr/geometry.hpp"

namespace cmr {

inline constexpr int kDefaultSdfResolution = 32;

// Voxelized modified signed distance field: distance to the surface inside
// the mesh, exactly zero outside. Node (i,j,k) sits at
// origin + spacing * (i,j,k); values are indexed x-major.
struct SDFGrid {
  Vec3 origin = Vec3::Zero();
  double spacing = 1.0;
  std::array<int, 3> dims = {0, 0, 0};
  std::vector<double> values;

  double at(int i, int j, int k) const {
    return values[(static_cast<std::size_t>(i) * dims[1] + j) * dims[2] + k];
  }
  double& at(int i, int j, int k) {
    return values[(static_cast<std::size_t>(i) * dims[1] + j) * dims[2] + k];
  }
};

// Builds the field over the mesh bounding box with a one-voxel margin.
// Inside/outside is decided by ray parity (signed upward crossings); interior
// values are exact distances to the surface via an AABB tree.
// Throws TopologyError when a connected component is not watertight.
SDFGrid buildSdf(const Mesh& mesh, int resolution = kDefaultSdfResolution);

// Trilinear interpolation; points outside the grid return 0.
double sampleSdfAt(const SDFGrid& grid, const Vec3& p);
Eigen::VectorXd sampleSdf(const SDFGrid& grid, const PointSet3D& points);

namespace kernels {

// Value plus gradient w.r.t. the query point (null gradOut skips it).
template <typename T>
T sampleSdfKernel(const SDFGrid& grid, const T p[3], T gradOut[3]);

}  // namespace kernels

namespace ops {

// points: [P,3] -> [P]; gradients flow to the points only (the field itself
// is built from detached geometry).
template <typename T>
ad::Var<T> sampleSdf(ad::Var<T> points, const SDFGrid& grid) {
  ad::Tape<T>& t = *points.tape;
  const auto& sh = points.val().shape();
  assert(sh.size() == 2 && sh[1] == 3);
  int P = sh[0];
  Tensor<T> out({P});
  for (int p = 0; p < P; ++p) out[p] = kernels::sampleSdfKernel<T>(grid, points.val().data() + 3 * p, nullptr);
  bool rg = points.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ip = points.id;
    const SDFGrid* g = &grid;
    t.setBack(id, [id, ip, g, P](ad::Tape<T>& tp) {
      const Tensor<T>& gr = tp.grad(id);
      Tensor<T>& dp = tp.grad(ip);
      for (int p = 0; p < P; ++p) {
        T grad[3];
        kernels::sampleSdfKernel<T>(*g, tp.val(ip).data() + 3 * p, grad);
        for (int c = 0; c < 3; ++c) dp.at(p, c) += gr[p] * grad[c];
      }
    });
  }
  return {&t, id};
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Differentiable multi-person depth rasterizer
// ---------------------------------------------------------------------------

struct RasterConfig {
  int height = 64;
  int width = 64;
  double sharpness = 50.0;       // sigmoid scale on signed boundary distance
  double coverageCut = 1e-4;     // faces/pixels below this coverage are absent
};

struct DepthRender {
  // depth[n]: [H,W] in model units, +inf where the instance is absent.
  std::vector<TensorD> depth;
  // softVisibility[n]: [H,W]; per-pixel sums are <= 1.
  std::vector<TensorD> softVisibility;
  int degenerateTriangles = 0;
};

// Orthographic rasterization through a shared weak-perspective camera;
// vertex z is retained as depth. Coverage is a sigmoid of signed distance to
// the triangle boundary; instance depth is the coverage-weighted soft-min of
// face depths; visibility is a coverage-gated softmax over -depth*sharpness.
DepthRender rasterize(const std::vector<Mesh>& meshes, const WeakPerspectiveCamera& cam, const RasterConfig& cfg);

namespace detail {

// Forward state kept for the hand-written backward pass of lossDepth.
template <typename T>
struct SoftRasterState {
  int n = 0, height = 0, width = 0;
  T sharpness = T(50);
  T coverageCut = T(1e-4);
  std::vector<Tensor<T>> xy;        // per instance [V,2] (normalized coords)
  std::vector<Tensor<T>> z;         // per instance [V]
  std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*> faces;
  std::vector<Tensor<T>> coverage;  // [H,W] per instance
  std::vector<Tensor<T>> depth;     // finite only where den > 0
  std::vector<Tensor<T>> den;       // soft-min normalizer
  std::vector<Tensor<T>> zmin;      // per-pixel face-depth shift
  int degenerate = 0;
};

template <typename T>
void softRasterForward(SoftRasterState<T>& st);

// dCoverage/dDepth: per-instance [H,W] upstream grads; outputs per-instance
// vertex gradients [V,3] (in the projected frame: x,y in normalized units, z
// in model units).
template <typename T>
void softRasterBackward(const SoftRasterState<T>& st, const std::vector<Tensor<T>>& dCoverage,
                        const std::vector<Tensor<T>>& dDepth, std::vector<Tensor<T>>& dXy,
                        std::vector<Tensor<T>>& dZ);

}  // namespace detail
}  // namespace cmr
