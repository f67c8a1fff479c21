#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>

#include "cmr/autodiff.hpp"
#include "cmr/common.hpp"

namespace cmr {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Two unnormalized 3-vectors; converted to a rotation by Gram-Schmidt.
using Rotation6D = Eigen::Matrix<double, 6, 1>;
using RotationMatrix = Mat3;

// P x 3 / P x 2 point sets. Normalized image coordinates span [-1,1]^2 with
// origin at the image center, x right, y up.
using PointSet3D = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using PointSet2D = Eigen::Matrix<double, Eigen::Dynamic, 2>;

struct WeakPerspectiveCamera {
  double s = 1.0;              // scale, > 0
  Vec2 t = Vec2::Zero();       // translation in normalized image units

  bool valid() const { return std::isfinite(s) && s > 0.0 && t.allFinite(); }
};

struct Similarity {
  double scale = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (R * p) + t; }
  PointSet3D apply(const PointSet3D& pts) const {
    return ((scale * (R * pts.transpose())).colwise() + t).transpose();
  }
};

// Vector norms below this are treated as degenerate in the 6D conversion.
inline constexpr double kDegenerateEps = 1e-8;

// --- pixel <-> normalized image coordinates ---------------------------------
// Pixel (px, py) indexes columns/rows with y down; its center maps to
// normalized coordinates via  x_n = 2*(px+0.5)/W - 1,  y_n = 1 - 2*(py+0.5)/H,
// so normalized y points up. The maps below are exact inverses.

inline Vec2 pixelToNormalized(const Vec2& px, int width, int height) {
  return {2.0 * (px.x() + 0.5) / width - 1.0, 1.0 - 2.0 * (px.y() + 0.5) / height};
}

inline Vec2 normalizedToPixel(const Vec2& n, int width, int height) {
  return {(n.x() + 1.0) * 0.5 * width - 0.5, (1.0 - n.y()) * 0.5 * height - 0.5};
}

// --- templated kernels shared by the plain API and the autodiff tape --------

namespace kernels {

// r = [a1; a2] -> R with columns (b1, b2, b3). R is row-major 3x3.
// Returns false when a vector norm or the orthogonalized residual falls
// below kDegenerateEps.
template <typename T>
bool rot6dToMatrix(const T r[6], T R[9]) {
  T a1[3] = {r[0], r[1], r[2]};
  T a2[3] = {r[3], r[4], r[5]};
  T n1 = std::sqrt(a1[0] * a1[0] + a1[1] * a1[1] + a1[2] * a1[2]);
  if (!(n1 > T(kDegenerateEps))) return false;
  T b1[3] = {a1[0] / n1, a1[1] / n1, a1[2] / n1};
  T s = b1[0] * a2[0] + b1[1] * a2[1] + b1[2] * a2[2];
  T c[3] = {a2[0] - s * b1[0], a2[1] - s * b1[1], a2[2] - s * b1[2]};
  T n2 = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
  if (!(n2 > T(kDegenerateEps))) return false;
  T b2[3] = {c[0] / n2, c[1] / n2, c[2] / n2};
  T b3[3] = {b1[1] * b2[2] - b1[2] * b2[1], b1[2] * b2[0] - b1[0] * b2[2], b1[0] * b2[1] - b1[1] * b2[0]};
  for (int i = 0; i < 3; ++i) {
    R[3 * i + 0] = b1[i];
    R[3 * i + 1] = b2[i];
    R[3 * i + 2] = b3[i];
  }
  return true;
}

// Reverse-mode of rot6dToMatrix; dR is df/dR (row-major), dr accumulates df/dr.
template <typename T>
void rot6dToMatrixBackward(const T r[6], const T dR[9], T dr[6]) {
  T a1[3] = {r[0], r[1], r[2]};
  T a2[3] = {r[3], r[4], r[5]};
  T n1 = std::sqrt(a1[0] * a1[0] + a1[1] * a1[1] + a1[2] * a1[2]);
  T b1[3] = {a1[0] / n1, a1[1] / n1, a1[2] / n1};
  T s = b1[0] * a2[0] + b1[1] * a2[1] + b1[2] * a2[2];
  T c[3] = {a2[0] - s * b1[0], a2[1] - s * b1[1], a2[2] - s * b1[2]};
  T n2 = std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]);
  T b2[3] = {c[0] / n2, c[1] / n2, c[2] / n2};

  T dB1[3], dB2[3], dB3[3];
  for (int i = 0; i < 3; ++i) {
    dB1[i] = dR[3 * i + 0];
    dB2[i] = dR[3 * i + 1];
    dB3[i] = dR[3 * i + 2];
  }
  // b3 = b1 x b2:  d/db1 += b2 x g,  d/db2 += g x b1
  dB1[0] += b2[1] * dB3[2] - b2[2] * dB3[1];
  dB1[1] += b2[2] * dB3[0] - b2[0] * dB3[2];
  dB1[2] += b2[0] * dB3[1] - b2[1] * dB3[0];
  dB2[0] += dB3[1] * b1[2] - dB3[2] * b1[1];
  dB2[1] += dB3[2] * b1[0] - dB3[0] * b1[2];
  dB2[2] += dB3[0] * b1[1] - dB3[1] * b1[0];
  // b2 = c / n2
  T dot2 = b2[0] * dB2[0] + b2[1] * dB2[1] + b2[2] * dB2[2];
  T dc[3];
  for (int i = 0; i < 3; ++i) dc[i] = (dB2[i] - b2[i] * dot2) / n2;
  // c = a2 - s*b1
  T da2[3] = {dc[0], dc[1], dc[2]};
  T ds = -(b1[0] * dc[0] + b1[1] * dc[1] + b1[2] * dc[2]);
  for (int i = 0; i < 3; ++i) dB1[i] -= s * dc[i];
  // s = b1 . a2
  for (int i = 0; i < 3; ++i) {
    dB1[i] += ds * a2[i];
    da2[i] += ds * b1[i];
  }
  // b1 = a1 / n1
  T dot1 = b1[0] * dB1[0] + b1[1] * dB1[1] + b1[2] * dB1[2];
  for (int i = 0; i < 3; ++i) {
    dr[i] += (dB1[i] - b1[i] * dot1) / n1;
    dr[3 + i] += da2[i];
  }
}

}  // namespace kernels

// --- plain operations --------------------------------------------------------

// Gram-Schmidt 6D -> SO(3). Throws DegenerateRotationError on zero/parallel input.
RotationMatrix rot6dToMatrix(const Rotation6D& r);

// Inverse used for building ground truth: top-left two columns of R.
Rotation6D matrixToRot6d(const RotationMatrix& R);

// (x, y, z) -> (s*x + t_x, s*y + t_y); z is dropped.
PointSet2D projectWeakPerspective(const PointSet3D& points, const WeakPerspectiveCamera& cam);

struct ProcrustesResult {
  PointSet3D aligned;
  Similarity transform;
  double residual = 0.0;  // mean squared distance after alignment
};

// Closed-form similarity alignment (orthogonal Procrustes with scaling)
// minimizing mean squared distance between transform(pred) and gt.
// Throws AlignmentDegenerateError on rank-deficient configurations.
ProcrustesResult procrustesAlign(const PointSet3D& pred, const PointSet3D& gt);

// --- autodiff bindings -------------------------------------------------------

namespace ops {

// pose6d: [J,6] -> rotation matrices [J,3,3].
template <typename T>
ad::Var<T> rot6dToMatrices(ad::Var<T> pose6d) {
  ad::Tape<T>& t = *pose6d.tape;
  const auto& s = pose6d.val().shape();
  assert(s.size() == 2 && s[1] == 6);
  int J = s[0];
  Tensor<T> out({J, 3, 3});
  for (int j = 0; j < J; ++j) {
    if (!kernels::rot6dToMatrix(pose6d.val().data() + 6 * j, out.data() + 9 * j))
      throw DegenerateRotationError("rot6dToMatrices: degenerate 6D rotation at joint " + std::to_string(j));
  }
  bool rg = pose6d.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ip = pose6d.id;
    t.setBack(id, [id, ip, J](ad::Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      Tensor<T>& dp = tp.grad(ip);
      for (int j = 0; j < J; ++j)
        kernels::rot6dToMatrixBackward(tp.val(ip).data() + 6 * j, g.data() + 9 * j, dp.data() + 6 * j);
    });
  }
  return {&t, id};
}

// points: [P,3], cam: [3] = (s, t_x, t_y) -> [P,2].
template <typename T>
ad::Var<T> projectPoints(ad::Var<T> points, ad::Var<T> cam) {
  ad::Tape<T>& t = *points.tape;
  const auto& sh = points.val().shape();
  assert(sh.size() == 2 && sh[1] == 3 && cam.val().size() == 3);
  int P = sh[0];
  T s = cam.val()[0], tx = cam.val()[1], ty = cam.val()[2];
  Tensor<T> out({P, 2});
  for (int p = 0; p < P; ++p) {
    out.at(p, 0) = s * points.val().at(p, 0) + tx;
    out.at(p, 1) = s * points.val().at(p, 1) + ty;
  }
  bool rg = points.requiresGrad() || cam.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int ipt = points.id, icam = cam.id;
    t.setBack(id, [id, ipt, icam, P](ad::Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      T s = tp.val(icam)[0];
      if (tp.requiresGrad(ipt)) {
        Tensor<T>& dp = tp.grad(ipt);
        for (int p = 0; p < P; ++p) {
          dp.at(p, 0) += s * g.at(p, 0);
          dp.at(p, 1) += s * g.at(p, 1);
        }
      }
      if (tp.requiresGrad(icam)) {
        Tensor<T>& dc = tp.grad(icam);
        const Tensor<T>& pts = tp.val(ipt);
        for (int p = 0; p < P; ++p) {
          dc[0] += g.at(p, 0) * pts.at(p, 0) + g.at(p, 1) * pts.at(p, 1);
          dc[1] += g.at(p, 0);
          dc[2] += g.at(p, 1);
        }
      }
    });
  }
  return {&t, id};
}

// Places model-space vertices into the shared scene frame:
// (x,y,z) -> (s*x + t_x, s*y + t_y, s*z + depthGauge/s).
// The 1/s term is the weak-perspective depth proxy: larger image scale means
// the person is closer to the camera.
template <typename T>
ad::Var<T> placeInScene(ad::Var<T> verts, ad::Var<T> cam, T depthGauge) {
  ad::Tape<T>& t = *verts.tape;
  const auto& sh = verts.val().shape();
  assert(sh.size() == 2 && sh[1] == 3 && cam.val().size() == 3);
  int P = sh[0];
  T s = cam.val()[0], tx = cam.val()[1], ty = cam.val()[2];
  Tensor<T> out({P, 3});
  for (int p = 0; p < P; ++p) {
    out.at(p, 0) = s * verts.val().at(p, 0) + tx;
    out.at(p, 1) = s * verts.val().at(p, 1) + ty;
    out.at(p, 2) = s * verts.val().at(p, 2) + depthGauge / s;
  }
  bool rg = verts.requiresGrad() || cam.requiresGrad();
  int id = t.push(std::move(out), rg);
  if (rg) {
    int iv = verts.id, icam = cam.id;
    t.setBack(id, [id, iv, icam, P, depthGauge](ad::Tape<T>& tp) {
      const Tensor<T>& g = tp.grad(id);
      T s = tp.val(icam)[0];
      if (tp.requiresGrad(iv)) {
        Tensor<T>& dv = tp.grad(iv);
        for (int p = 0; p < P; ++p)
          for (int c = 0; c < 3; ++c) dv.at(p, c) += s * g.at(p, c);
      }
      if (tp.requiresGrad(icam)) {
        Tensor<T>& dc = tp.grad(icam);
        const Tensor<T>& v = tp.val(iv);
        for (int p = 0; p < P; ++p) {
          dc[0] += g.at(p, 0) * v.at(p, 0) + g.at(p, 1) * v.at(p, 1) +
                   g.at(p, 2) * (v.at(p, 2) - depthGauge / (s * s));
          dc[1] += g.at(p, 0);
          dc[2] += g.at(p, 1);
        }
      }
    });
  }
  return {&t, id};
}

}  // namespace ops
}  // namespace cmr
