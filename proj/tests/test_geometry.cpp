#include "doctest.h"

#include <Eigen/Geometry>

#include "cmr/geometry.hpp"
#include "helpers.hpp"

using namespace cmr;
using test::finiteDiff;
using test::gradRelError;

namespace {

// Independent Gram-Schmidt oracle (Eigen-based, written before the kernel).
Mat3 gramSchmidtOracle(const Rotation6D& r) {
  Vec3 a1 = r.head<3>(), a2 = r.tail<3>();
  Vec3 b1 = a1.normalized();
  Vec3 b2 = (a2 - b1.dot(a2) * b1).normalized();
  Vec3 b3 = b1.cross(b2);
  Mat3 R;
  R.col(0) = b1;
  R.col(1) = b2;
  R.col(2) = b3;
  return R;
}

Rotation6D randomRot6d(Rng& rng) {
  Rotation6D r;
  for (int i = 0; i < 6; ++i) r[i] = rng.gaussian();
  return r;
}

Mat3 randomRotation(Rng& rng) {
  Eigen::Quaterniond q(rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian());
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace

TEST_SUITE_BEGIN("geometry");

TEST_CASE("rot6d: orthonormal inputs are fixed points") {
  Rotation6D r;
  r << 1, 0, 0, 0, 1, 0;
  CHECK(rot6dToMatrix(r).isApprox(Mat3::Identity(), 1e-12));

  r << 0, 1, 0, 0, 0, 1;
  Mat3 R = rot6dToMatrix(r);
  CHECK(R.col(0).isApprox(Vec3::UnitY(), 1e-12));
  CHECK(R.col(1).isApprox(Vec3::UnitZ(), 1e-12));
  CHECK(R.col(2).isApprox(Vec3::UnitX(), 1e-12));
}

TEST_CASE("rot6d: random inputs land in SO(3) and match the oracle") {
  Rng rng(100);
  for (int trial = 0; trial < 1000; ++trial) {
    Rotation6D r = randomRot6d(rng);
    if (r.head<3>().norm() < 1e-4 || r.head<3>().cross(r.tail<3>()).norm() < 1e-4) continue;
    Mat3 R = rot6dToMatrix(r);
    CHECK((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(R.isApprox(gramSchmidtOracle(r), 1e-9));
  }
}

TEST_CASE("rot6d: degenerate inputs raise") {
  Rotation6D r;
  r << 0, 0, 0, 1, 0, 0;
  CHECK_THROWS_AS(rot6dToMatrix(r), DegenerateRotationError);
  r << 1, 0, 0, 2, 0, 0;  // parallel
  CHECK_THROWS_AS(rot6dToMatrix(r), DegenerateRotationError);
}

TEST_CASE("rot6d: gradient matches central finite differences") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    Rotation6D r = randomRot6d(rng);
    if (r.head<3>().norm() < 0.3 || r.head<3>().cross(r.tail<3>()).norm() < 0.3) continue;
    // Random linear functional of R keeps the check scalar.
    Eigen::Matrix<double, 9, 1> w;
    for (int i = 0; i < 9; ++i) w[i] = rng.gaussian();

    auto eval = [&](const Eigen::VectorXd& x) {
      double R[9];
      REQUIRE(kernels::rot6dToMatrix(x.data(), R));
      double acc = 0;
      for (int i = 0; i < 9; ++i) acc += w[i] * R[i];
      return acc;
    };
    Eigen::VectorXd x = r;
    double dr[6] = {0, 0, 0, 0, 0, 0};
    kernels::rot6dToMatrixBackward(r.data(), w.data(), dr);
    Eigen::VectorXd analytic = Eigen::Map<Eigen::VectorXd>(dr, 6);
    CHECK(gradRelError(analytic, finiteDiff(eval, x, 1e-5)) < 1e-4);
  }
}

TEST_CASE("projection: identity and analytic cases") {
  PointSet3D p(1, 3);
  p << 0.3, -0.2, 5.0;
  WeakPerspectiveCamera cam;
  PointSet2D q = projectWeakPerspective(p, cam);
  CHECK(q(0, 0) == doctest::Approx(0.3));
  CHECK(q(0, 1) == doctest::Approx(-0.2));

  cam.s = 2.0;
  cam.t = Vec2(0.1, -0.2);
  p << 0.5, 0.5, 1.0;
  q = projectWeakPerspective(p, cam);
  CHECK(q(0, 0) == doctest::Approx(1.1));
  CHECK(q(0, 1) == doctest::Approx(0.8));

  cam.s = 0.0;
  CHECK_THROWS(projectWeakPerspective(p, cam));
}

TEST_CASE("projection is linear in points at zero translation") {
  Rng rng(102);
  WeakPerspectiveCamera cam;
  cam.s = 1.7;
  PointSet3D p(5, 3);
  for (int i = 0; i < 5; ++i) p.row(i) << rng.gaussian(), rng.gaussian(), rng.gaussian();
  double alpha = 2.5;
  CHECK((projectWeakPerspective(alpha * p, cam) - alpha * projectWeakPerspective(p, cam)).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("projection gradient via the tape matches finite differences") {
  Rng rng(103);
  Tensor<double> pts({4, 3});
  for (std::int64_t i = 0; i < pts.size(); ++i) pts[i] = rng.gaussian();
  Tensor<double> cam({3});
  cam[0] = 1.4;
  cam[1] = 0.2;
  cam[2] = -0.1;

  auto eval = [&](const Eigen::VectorXd& x) {
    ad::Tape<double> t;
    Tensor<double> p = pts, c = cam;
    for (int i = 0; i < 12; ++i) p[i] = x[i];
    for (int i = 0; i < 3; ++i) c[i] = x[12 + i];
    auto out = ops::projectPoints(ad::leaf(t, p), ad::leaf(t, c));
    return ad::sumSquares(out).val()[0];
  };

  ad::Tape<double> t;
  auto pv = ad::leaf(t, pts);
  auto cv = ad::leaf(t, cam);
  auto loss = ad::sumSquares(ops::projectPoints(pv, cv));
  t.backward(loss.id);

  Eigen::VectorXd x(15), analytic(15);
  for (int i = 0; i < 12; ++i) {
    x[i] = pts[i];
    analytic[i] = t.grad(pv.id)[i];
  }
  for (int i = 0; i < 3; ++i) {
    x[12 + i] = cam[i];
    analytic[12 + i] = t.grad(cv.id)[i];
  }
  CHECK(gradRelError(analytic, finiteDiff(eval, x, 1e-5)) < 1e-4);
}

TEST_CASE("pixel <-> normalized maps are exact inverses") {
  Rng rng(104);
  for (int i = 0; i < 50; ++i) {
    Vec2 px(rng.uniform(-5, 229), rng.uniform(-5, 229));
    Vec2 back = normalizedToPixel(pixelToNormalized(px, 224, 224), 224, 224);
    CHECK((back - px).norm() < 1e-12);
  }
  // Center of the top-left pixel maps near (-1, +1).
  Vec2 n = pixelToNormalized(Vec2(0, 0), 224, 224);
  CHECK(n.x() == doctest::Approx(-1.0 + 1.0 / 224));
  CHECK(n.y() == doctest::Approx(1.0 - 1.0 / 224));
}

TEST_CASE("procrustes: exact recovery of similarity transforms") {
  Rng rng(105);
  PointSet3D gt(10, 3);
  for (int i = 0; i < 10; ++i) gt.row(i) << rng.gaussian(), rng.gaussian(), rng.gaussian();

  SUBCASE("identity") {
    auto res = procrustesAlign(gt, gt);
    CHECK(res.residual < 1e-18);
    CHECK(res.transform.R.isApprox(Mat3::Identity(), 1e-9));
    CHECK(res.transform.scale == doctest::Approx(1.0));
  }

  SUBCASE("scaled rotated translated") {
    Mat3 R = randomRotation(rng);
    Vec3 c(0.3, -1.0, 2.0);
    PointSet3D pred = ((2.0 * (R * gt.transpose())).colwise() + c).transpose();
    auto res = procrustesAlign(pred, gt);
    CHECK((res.aligned - gt).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("procrustes: optimality vs random-search oracle") {
  Rng rng(106);
  PointSet3D gt(8, 3), pred(8, 3);
  for (int i = 0; i < 8; ++i) {
    gt.row(i) << rng.gaussian(), rng.gaussian(), rng.gaussian();
    pred.row(i) = gt.row(i) + 0.3 * Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian()).transpose();
  }
  double best = procrustesAlign(pred, gt).residual;
  for (int trial = 0; trial < 1000; ++trial) {
    Similarity s;
    s.scale = std::exp(rng.gaussian(0.0, 0.3));
    s.R = randomRotation(rng);
    s.t = Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
    double res = (s.apply(pred) - gt).squaredNorm() / 8.0;
    CHECK(best <= res + 1e-12);
  }
}

TEST_CASE("procrustes residual is invariant under similarity transforms of pred") {
  Rng rng(107);
  PointSet3D gt(6, 3), pred(6, 3);
  for (int i = 0; i < 6; ++i) {
    gt.row(i) << rng.gaussian(), rng.gaussian(), rng.gaussian();
    pred.row(i) << rng.gaussian(), rng.gaussian(), rng.gaussian();
  }
  double base = procrustesAlign(pred, gt).residual;
  for (int trial = 0; trial < 20; ++trial) {
    Similarity s;
    s.scale = std::exp(rng.gaussian(0.0, 0.5));
    s.R = randomRotation(rng);
    s.t = 2.0 * Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian());
    CHECK(procrustesAlign(s.apply(pred), gt).residual == doctest::Approx(base).epsilon(1e-6));
  }
}

TEST_CASE("procrustes: degenerate configurations raise") {
  PointSet3D a(3, 3), b(3, 3);
  a.setZero();
  b << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  CHECK_THROWS_AS(procrustesAlign(a, b), AlignmentDegenerateError);
  // Collinear points leave a free rotation about the line.
  PointSet3D line(4, 3);
  for (int i = 0; i < 4; ++i) line.row(i) << i, 0, 0;
  CHECK_THROWS_AS(procrustesAlign(line, line), AlignmentDegenerateError);
}

TEST_SUITE_END();
