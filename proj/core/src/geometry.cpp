#include "cmr/geometry.hpp"

#include <Eigen/SVD>

namespace cmr {

RotationMatrix rot6dToMatrix(const Rotation6D& r) {
  if (!r.allFinite()) throw DegenerateRotationError("rot6dToMatrix: non-finite input");
  double R[9];
  if (!kernels::rot6dToMatrix(r.data(), R))
    throw DegenerateRotationError("rot6dToMatrix: zero or parallel 6D vectors");
  RotationMatrix out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out(i, j) = R[3 * i + j];
  return out;
}

Rotation6D matrixToRot6d(const RotationMatrix& R) {
  Rotation6D r;
  r << R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1);
  return r;
}

PointSet2D projectWeakPerspective(const PointSet3D& points, const WeakPerspectiveCamera& cam) {
  if (!cam.valid()) throw Error("projectWeakPerspective: invalid camera (requires s > 0)");
  if (!points.allFinite()) throw NumericalError("projectWeakPerspective: non-finite points");
  PointSet2D out(points.rows(), 2);
  out.col(0) = cam.s * points.col(0).array() + cam.t.x();
  out.col(1) = cam.s * points.col(1).array() + cam.t.y();
  return out;
}

ProcrustesResult procrustesAlign(const PointSet3D& pred, const PointSet3D& gt) {
  const auto n = pred.rows();
  if (n != gt.rows() || n < 3) throw AlignmentDegenerateError("procrustesAlign: need matching point sets with >= 3 points");

  Vec3 muP = pred.colwise().mean();
  Vec3 muG = gt.colwise().mean();
  PointSet3D Xc = pred.rowwise() - muP.transpose();
  PointSet3D Yc = gt.rowwise() - muG.transpose();

  double varP = Xc.squaredNorm() / static_cast<double>(n);
  double varG = Yc.squaredNorm() / static_cast<double>(n);
  if (varP < 1e-18 || varG < 1e-18) throw AlignmentDegenerateError("procrustesAlign: coincident point set");

  Mat3 cov = (Yc.transpose() * Xc) / static_cast<double>(n);
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 d = svd.singularValues();
  if (d(1) < 1e-12 * std::max(d(0), 1e-300)) throw AlignmentDegenerateError("procrustesAlign: rank-deficient configuration");

  Vec3 sgn(1.0, 1.0, 1.0);
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) sgn(2) = -1.0;
  Mat3 R = svd.matrixU() * sgn.asDiagonal() * svd.matrixV().transpose();
  double s = d.dot(sgn) / varP;
  Vec3 t = muG - s * (R * muP);

  ProcrustesResult res;
  res.transform = Similarity{s, R, t};
  res.aligned = res.transform.apply(pred);
  res.residual = (res.aligned - gt).squaredNorm() / static_cast<double>(n);
  return res;
}

}  // namespace cmr
