#include "doctest.h"

#include <Eigen/Geometry>
#include <cstdio>
#include <map>
#include <set>

#include "cmr/body_model.hpp"
#include "helpers.hpp"

using namespace cmr;
using test::finiteDiff;
using test::gradRelError;

namespace {

BodyModelSpec& toySpec() {
  static BodyModelSpec spec = makeToyModel(1);
  return spec;
}

// Euler characteristic per connected component (V - E + F == 2 for closed
// genus-0 surfaces).
void checkEulerPerComponent(const BodyModelSpec& spec) {
  const int V = spec.numVertices();
  std::vector<int> comp(static_cast<std::size_t>(V), -1);
  // Union-find over face connectivity.
  std::vector<int> parent(static_cast<std::size_t>(V));
  for (int v = 0; v < V; ++v) parent[static_cast<std::size_t>(v)] = v;
  std::function<int(int)> find = [&](int v) { return parent[static_cast<std::size_t>(v)] == v ? v : parent[static_cast<std::size_t>(v)] = find(parent[static_cast<std::size_t>(v)]); };
  for (int f = 0; f < spec.numFaces(); ++f) {
    int a = find(spec.faces(f, 0));
    parent[static_cast<std::size_t>(a)] = find(spec.faces(f, 1));
    parent[static_cast<std::size_t>(find(spec.faces(f, 0)))] = find(spec.faces(f, 2));
  }
  std::map<int, int> vCount, fCount;
  std::map<int, std::set<std::pair<int, int>>> edges;
  for (int v = 0; v < V; ++v) vCount[find(v)]++;
  for (int f = 0; f < spec.numFaces(); ++f) {
    int root = find(spec.faces(f, 0));
    fCount[root]++;
    for (int e = 0; e < 3; ++e) {
      int a = spec.faces(f, e), b = spec.faces(f, (e + 1) % 3);
      edges[root].insert({std::min(a, b), std::max(a, b)});
    }
  }
  CHECK(vCount.size() > 1);  // several closed parts
  for (const auto& [root, nv] : vCount) {
    int euler = nv - static_cast<int>(edges[root].size()) + fCount[root];
    CHECK(euler == 2);
  }
}

}  // namespace

TEST_SUITE_BEGIN("body_model");

TEST_CASE("toy model satisfies the spec invariants") {
  const BodyModelSpec& spec = toySpec();
  CHECK(spec.numVertices() >= 100);
  CHECK(spec.numVertices() < 5000);
  for (int v = 0; v < spec.numVertices(); ++v)
    CHECK(spec.skinningWeights.row(v).sum() == doctest::Approx(1.0).epsilon(1e-9));
  for (int j = 0; j < kNumJoints; ++j)
    CHECK(spec.jointRegressor.row(j).sum() == doctest::Approx(1.0).epsilon(1e-9));
  // Body is life-sized (about 1.7 model units tall).
  double height = spec.templateVertices.col(1).maxCoeff() - spec.templateVertices.col(1).minCoeff();
  CHECK(height > 1.5);
  CHECK(height < 1.9);
}

TEST_CASE("toy model is deterministic") {
  BodyModelSpec a = makeToyModel(2), b = makeToyModel(2);
  CHECK(a.templateVertices == b.templateVertices);
  CHECK(a.faces == b.faces);
  CHECK(a.shapeBasis == b.shapeBasis);
  CHECK(a.jointRegressor == b.jointRegressor);
  CHECK(a.skinningWeights == b.skinningWeights);
}

TEST_CASE("toy model components are watertight (Euler oracle)") { checkEulerPerComponent(toySpec()); }

TEST_CASE("neutral parameters reproduce the template") {
  const BodyModelSpec& spec = toySpec();
  auto out = bodyForward(spec, BodyParams::neutral());
  CHECK((out.mesh.vertices - spec.templateVertices).cwiseAbs().maxCoeff() < 1e-9);
  PointSet3D expect = spec.jointRegressor * spec.templateVertices;
  CHECK((out.joints - expect).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("blendshapes are linear: one-hot shape adds one basis column") {
  const BodyModelSpec& spec = toySpec();
  for (int k : {0, 3, 7}) {
    BodyParams p = BodyParams::neutral();
    p.shape[k] = 1.0;
    auto out = bodyForward(spec, p);
    for (int v = 0; v < spec.numVertices(); ++v)
      for (int c = 0; c < 3; ++c)
        CHECK(out.mesh.vertices(v, c) ==
              doctest::Approx(spec.templateVertices(v, c) + spec.shapeBasis(3 * v + c, k)).epsilon(1e-9));
  }
}

TEST_CASE("body_forward is linear in shape at fixed pose") {
  const BodyModelSpec& spec = toySpec();
  Rng rng(200);
  BodyParams p1 = BodyParams::neutral(), p2 = BodyParams::neutral();
  for (int k = 0; k < kNumShape; ++k) {
    p1.shape[k] = rng.gaussian();
    p2.shape[k] = rng.gaussian();
  }
  double alpha = 0.3;
  BodyParams mix = p1;
  mix.shape = alpha * p1.shape + (1 - alpha) * p2.shape;
  auto o1 = bodyForward(spec, p1), o2 = bodyForward(spec, p2), om = bodyForward(spec, mix);
  CHECK((om.mesh.vertices - (alpha * o1.mesh.vertices + (1 - alpha) * o2.mesh.vertices)).cwiseAbs().maxCoeff() <
        1e-9);
}

TEST_CASE("global rotation equivariance (rigid-transform oracle)") {
  const BodyModelSpec& spec = toySpec();
  Rng rng(201);
  Eigen::Quaterniond q(rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian());
  q.normalize();
  Mat3 R = q.toRotationMatrix();

  BodyParams p = BodyParams::neutral();
  p.pose.row(0) = matrixToRot6d(R).transpose();
  auto rotated = bodyForward(spec, p);
  auto neutral = bodyForward(spec, BodyParams::neutral());

  // The root transform rotates everything about the root joint position.
  Vec3 root = neutral.joints.row(kPelvis).transpose();
  PointSet3D expectV = ((R * (neutral.mesh.vertices.rowwise() - root.transpose()).transpose()).colwise() + root).transpose();
  PointSet3D expectJ = ((R * (neutral.joints.rowwise() - root.transpose()).transpose()).colwise() + root).transpose();
  CHECK((rotated.mesh.vertices - expectV).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((rotated.joints - expectJ).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("one-hot skinning rigidly attaches vertices to joint transforms") {
  // Rotating the left shoulder moves exactly the capsules bound to the left
  // arm chain, and verts bound to the shoulder joint move rigidly.
  const BodyModelSpec& spec = toySpec();
  BodyParams p = BodyParams::neutral();
  Eigen::AngleAxisd aa(0.7, Vec3::UnitZ());
  p.pose.row(16) = matrixToRot6d(aa.toRotationMatrix()).transpose();
  auto posed = bodyForward(spec, p);
  auto neutral = bodyForward(spec, BodyParams::neutral());

  Vec3 pivot = neutral.joints.row(16).transpose();
  for (int v = 0; v < spec.numVertices(); ++v) {
    if (spec.skinningWeights(v, 16) == 1.0) {
      Vec3 expect = aa.toRotationMatrix() * (neutral.mesh.vertices.row(v).transpose() - pivot) + pivot;
      CHECK((posed.mesh.vertices.row(v).transpose() - expect).norm() < 1e-6);
    }
    if (spec.skinningWeights.row(v).segment(0, 13).sum() == 1.0 && spec.skinningWeights(v, 16) == 0.0) {
      // torso/leg verts unaffected by a shoulder rotation
      CHECK((posed.mesh.vertices.row(v) - neutral.mesh.vertices.row(v)).norm() < 1e-9);
    }
  }
}

TEST_CASE("degenerate pose propagates the rotation error") {
  BodyParams p = BodyParams::neutral();
  p.pose.row(5).setZero();
  CHECK_THROWS_AS(bodyForward(toySpec(), p), DegenerateRotationError);
}

TEST_CASE("vertex gradients w.r.t. pose and shape match finite differences") {
  const BodyModelSpec& spec = toySpec();
  Rng rng(202);
  // Random but safely non-degenerate pose.
  Tensor<double> pose({kNumJoints, 6});
  for (int j = 0; j < kNumJoints; ++j) {
    Rotation6D r;
    r << 1, 0, 0, 0, 1, 0;
    for (int c = 0; c < 6; ++c) r[c] += 0.3 * rng.gaussian();
    for (int c = 0; c < 6; ++c) pose.at(j, c) = r[c];
  }
  Tensor<double> shape({kNumShape});
  for (int k = 0; k < kNumShape; ++k) shape[k] = 0.5 * rng.gaussian();

  auto eval = [&](const Eigen::VectorXd& x) {
    ad::Tape<double> t;
    Tensor<double> p = pose, s = shape;
    for (int i = 0; i < kNumJoints * 6; ++i) p[i] = x[i];
    for (int k = 0; k < kNumShape; ++k) s[k] = x[kNumJoints * 6 + k];
    auto rm = ops::rot6dToMatrices(ad::leaf(t, p));
    auto body = ops::bodyForward(spec, rm, ad::leaf(t, s));
    return ad::add(ad::sumSquares(body.verts), ad::scale(ad::sumSquares(body.joints), 2.0)).val()[0];
  };

  ad::Tape<double> t;
  auto pv = ad::leaf(t, pose);
  auto sv = ad::leaf(t, shape);
  auto rm = ops::rot6dToMatrices(pv);
  auto body = ops::bodyForward(spec, rm, sv);
  auto loss = ad::add(ad::sumSquares(body.verts), ad::scale(ad::sumSquares(body.joints), 2.0));
  t.backward(loss.id);

  const int n = kNumJoints * 6 + kNumShape;
  Eigen::VectorXd x(n), analytic(n);
  for (int i = 0; i < kNumJoints * 6; ++i) {
    x[i] = pose[i];
    analytic[i] = t.grad(pv.id)[i];
  }
  for (int k = 0; k < kNumShape; ++k) {
    x[kNumJoints * 6 + k] = shape[k];
    analytic[kNumJoints * 6 + k] = t.grad(sv.id)[k];
  }
  CHECK(gradRelError(analytic, finiteDiff(eval, x, 1e-5)) < 1e-4);
}

TEST_CASE("model archive round-trips and validates") {
  const BodyModelSpec& spec = toySpec();
  std::string path = "/tmp/cmr_test_model.cmar";
  saveModel(path, spec);
  BodyModelSpec loaded = loadModel(path);
  CHECK(loaded.numVertices() == spec.numVertices());
  CHECK((loaded.templateVertices - spec.templateVertices).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(loaded.faces == spec.faces);
  auto a = bodyForward(loaded, BodyParams::neutral());
  auto b = bodyForward(spec, BodyParams::neutral());
  CHECK((a.joints - b.joints).cwiseAbs().maxCoeff() < 1e-5);
  std::remove(path.c_str());

  CHECK_THROWS_AS(loadModel("/tmp/does_not_exist.cmar"), DataError);
}

TEST_CASE("17-keypoint selection picks the documented joints") {
  PointSet3D joints(kNumJoints, 3);
  for (int j = 0; j < kNumJoints; ++j) joints.row(j) << j, 2 * j, 3 * j;
  auto kp = selectKeypoints17(joints);
  CHECK(kp.rows() == 17);
  CHECK(kp(0, 0) == 15);   // nose -> head
  CHECK(kp(5, 0) == 16);   // left shoulder
  CHECK(kp(11, 0) == 1);   // left hip
  CHECK(kp(16, 0) == 8);   // right ankle
}

TEST_SUITE_END();
