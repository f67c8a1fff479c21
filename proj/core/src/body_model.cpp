#include "cmr/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <tuple>

#include "cmr/io/array_archive.hpp"

namespace cmr {

void BodyModelSpec::validate() const {
  const int V = numVertices();
  if (V < 4) throw SchemaError("body model: field 'template' needs at least 4 vertices");
  if (!templateVertices.allFinite()) throw SchemaError("body model: field 'template' has non-finite entries");
  for (int f = 0; f < numFaces(); ++f)
    for (int k = 0; k < 3; ++k)
      if (faces(f, k) < 0 || faces(f, k) >= V) throw SchemaError("body model: field 'faces' indexes out of range");
  if (shapeBasis.rows() != 3 * V || shapeBasis.cols() != kNumShape)
    throw SchemaError("body model: field 'shape_basis' has wrong shape");
  if (jointRegressor.rows() != kNumJoints || jointRegressor.cols() != V)
    throw SchemaError("body model: field 'joint_regressor' has wrong shape");
  for (int j = 0; j < kNumJoints; ++j)
    if (std::abs(jointRegressor.row(j).sum() - 1.0) > 1e-6)
      throw SchemaError("body model: field 'joint_regressor' row " + std::to_string(j) + " does not sum to 1");
  int roots = 0;
  for (int j = 0; j < kNumJoints; ++j) {
    if (parents[j] == -1)
      ++roots;
    else if (parents[j] < 0 || parents[j] >= j)
      throw SchemaError("body model: field 'parents' is not a topologically sorted tree");
  }
  if (roots != 1) throw SchemaError("body model: field 'parents' must have exactly one root");
  if (skinningWeights.rows() != V || skinningWeights.cols() != kNumJoints)
    throw SchemaError("body model: field 'skinning_weights' has wrong shape");
  for (int v = 0; v < V; ++v) {
    if (skinningWeights.row(v).minCoeff() < -1e-9)
      throw SchemaError("body model: field 'skinning_weights' has negative entries");
    if (std::abs(skinningWeights.row(v).sum() - 1.0) > 1e-6)
      throw SchemaError("body model: field 'skinning_weights' row " + std::to_string(v) + " does not sum to 1");
  }
}

BodyParams BodyParams::neutral() {
  BodyParams p;
  for (int j = 0; j < kNumJoints; ++j) {
    p.pose.row(j) << 1, 0, 0, 0, 1, 0;  // identity rotation in 6D
  }
  p.shape.setZero();
  p.camera = WeakPerspectiveCamera{};
  return p;
}

Eigen::VectorXd BodyParams::toVector() const {
  Eigen::VectorXd v(kDim);
  for (int j = 0; j < kNumJoints; ++j) v.segment<6>(6 * j) = pose.row(j).transpose();
  v.segment<kNumShape>(kNumJoints * 6) = shape;
  v(kDim - 3) = camera.s;
  v(kDim - 2) = camera.t.x();
  v(kDim - 1) = camera.t.y();
  return v;
}

BodyParams BodyParams::fromVector(const Eigen::VectorXd& v) {
  if (v.size() != kDim) throw Error("BodyParams::fromVector: wrong length");
  BodyParams p;
  for (int j = 0; j < kNumJoints; ++j) p.pose.row(j) = v.segment<6>(6 * j).transpose();
  p.shape = v.segment<kNumShape>(kNumJoints * 6);
  p.camera.s = v(kDim - 3);
  p.camera.t = Vec2(v(kDim - 2), v(kDim - 1));
  return p;
}

// ---------------------------------------------------------------------------
// Forward kinematics + linear blend skinning
// ---------------------------------------------------------------------------

namespace kernels {

namespace {

template <typename T>
inline void mat3Mul(const T* a, const T* b, T* out) {  // row-major 3x3
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      out[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
}

template <typename T>
inline void mat3MulVec(const T* a, const T* v, T* out) {
  for (int i = 0; i < 3; ++i) out[i] = a[3 * i] * v[0] + a[3 * i + 1] * v[1] + a[3 * i + 2] * v[2];
}

template <typename T>
inline void mat3TMulVec(const T* a, const T* v, T* out) {
  for (int i = 0; i < 3; ++i) out[i] = a[i] * v[0] + a[3 + i] * v[1] + a[6 + i] * v[2];
}

template <typename T>
struct FkState {
  std::vector<T> shaped;               // V*3
  T J0[kNumJoints][3];                 // regressed rest joints
  T GR[kNumJoints][9], Gt[kNumJoints][3];  // global transforms
  T St[kNumJoints][3];                 // skinning translation (rotation = GR)
};

template <typename T>
void runForward(const BodyModelSpec& spec, const T* rotmats, const T* shape, FkState<T>& st) {
  const int V = spec.numVertices();
  st.shaped.resize(static_cast<std::size_t>(V) * 3);
  for (int v = 0; v < V; ++v)
    for (int c = 0; c < 3; ++c) {
      double acc = spec.templateVertices(v, c);
      for (int k = 0; k < kNumShape; ++k)
        acc += static_cast<double>(shape[k]) * spec.shapeBasis(3 * v + c, k);
      st.shaped[static_cast<std::size_t>(v) * 3 + c] = static_cast<T>(acc);
    }
  for (int j = 0; j < kNumJoints; ++j)
    for (int c = 0; c < 3; ++c) {
      T acc = 0;
      for (int v = 0; v < V; ++v)
        acc += static_cast<T>(spec.jointRegressor(j, v)) * st.shaped[static_cast<std::size_t>(v) * 3 + c];
      st.J0[j][c] = acc;
    }
  for (int j = 0; j < kNumJoints; ++j) {
    const T* R = rotmats + 9 * j;
    T off[3];
    int p = spec.parents[j];
    for (int c = 0; c < 3; ++c) off[c] = p < 0 ? st.J0[j][c] : st.J0[j][c] - st.J0[p][c];
    if (p < 0) {
      std::copy(R, R + 9, st.GR[j]);
      std::copy(off, off + 3, st.Gt[j]);
    } else {
      mat3Mul(st.GR[p], R, st.GR[j]);
      mat3MulVec(st.GR[p], off, st.Gt[j]);
      for (int c = 0; c < 3; ++c) st.Gt[j][c] += st.Gt[p][c];
    }
    T rj[3];
    mat3MulVec(st.GR[j], st.J0[j], rj);
    for (int c = 0; c < 3; ++c) st.St[j][c] = st.Gt[j][c] - rj[c];
  }
}

}  // namespace

template <typename T>
void bodyForwardKernel(const BodyModelSpec& spec, const T* rotmats, const T* shape, T* outVerts, T* outJoints) {
  FkState<T> st;
  runForward(spec, rotmats, shape, st);
  const int V = spec.numVertices();
  for (int j = 0; j < kNumJoints; ++j)
    for (int c = 0; c < 3; ++c) outJoints[3 * j + c] = st.Gt[j][c];
  for (int v = 0; v < V; ++v) {
    const T* sv = st.shaped.data() + static_cast<std::size_t>(v) * 3;
    T out[3] = {0, 0, 0};
    for (int j = 0; j < kNumJoints; ++j) {
      T w = static_cast<T>(spec.skinningWeights(v, j));
      if (w == T(0)) continue;
      T rv[3];
      mat3MulVec(st.GR[j], sv, rv);
      for (int c = 0; c < 3; ++c) out[c] += w * (rv[c] + st.St[j][c]);
    }
    for (int c = 0; c < 3; ++c) outVerts[3 * v + c] = out[c];
  }
}

template <typename T>
void bodyForwardBackward(const BodyModelSpec& spec, const T* rotmats, const T* shape, const T* dVerts,
                         const T* dJoints, T* dRotmats, T* dShape) {
  FkState<T> st;
  runForward(spec, rotmats, shape, st);
  const int V = spec.numVertices();

  std::vector<T> dShaped(static_cast<std::size_t>(V) * 3, T(0));
  T dGR[kNumJoints][9] = {};
  T dGt[kNumJoints][3] = {};
  T dJ0[kNumJoints][3] = {};

  // Skinning: v' = sum_j w (GR_j * shaped_v + St_j), St_j = Gt_j - GR_j * J0_j
  if (dVerts) {
    for (int v = 0; v < V; ++v) {
      const T* g = dVerts + 3 * v;
      const T* sv = st.shaped.data() + static_cast<std::size_t>(v) * 3;
      for (int j = 0; j < kNumJoints; ++j) {
        T w = static_cast<T>(spec.skinningWeights(v, j));
        if (w == T(0)) continue;
        for (int i = 0; i < 3; ++i)
          for (int c = 0; c < 3; ++c) dGR[j][3 * i + c] += w * g[i] * sv[c];
        T back[3];
        mat3TMulVec(st.GR[j], g, back);
        for (int c = 0; c < 3; ++c) dShaped[static_cast<std::size_t>(v) * 3 + c] += w * back[c];
        // St contribution
        for (int c = 0; c < 3; ++c) dGt[j][c] += w * g[c];
        for (int i = 0; i < 3; ++i)
          for (int c = 0; c < 3; ++c) dGR[j][3 * i + c] -= w * g[i] * st.J0[j][c];
        T tmp[3];
        mat3TMulVec(st.GR[j], g, tmp);
        for (int c = 0; c < 3; ++c) dJ0[j][c] -= w * tmp[c];
      }
    }
  }
  if (dJoints) {
    for (int j = 0; j < kNumJoints; ++j)
      for (int c = 0; c < 3; ++c) dGt[j][c] += dJoints[3 * j + c];
  }

  // FK reverse: children before parents.
  for (int j = kNumJoints - 1; j >= 0; --j) {
    int p = spec.parents[j];
    const T* R = rotmats + 9 * j;
    T off[3];
    for (int c = 0; c < 3; ++c) off[c] = p < 0 ? st.J0[j][c] : st.J0[j][c] - st.J0[p][c];
    T dAR[9], dAt[3];
    if (p < 0) {
      std::copy(dGR[j], dGR[j] + 9, dAR);
      std::copy(dGt[j], dGt[j] + 3, dAt);
    } else {
      // G_j.R = Gp.R * A.R ; G_j.t = Gp.R * A.t + Gp.t
      for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) {
          // dGp.R += dG.R * A.R^T + dG.t (x) A.t
          dGR[p][3 * i + c] += dGR[j][3 * i + 0] * R[3 * c + 0] + dGR[j][3 * i + 1] * R[3 * c + 1] +
                               dGR[j][3 * i + 2] * R[3 * c + 2];
          dGR[p][3 * i + c] += dGt[j][i] * off[c];
        }
      for (int c = 0; c < 3; ++c) dGt[p][c] += dGt[j][c];
      // dA.R = Gp.R^T * dG.R ; dA.t = Gp.R^T * dG.t
      for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c)
          dAR[3 * i + c] = st.GR[p][i] * dGR[j][c] + st.GR[p][3 + i] * dGR[j][3 + c] + st.GR[p][6 + i] * dGR[j][6 + c];
      mat3TMulVec(st.GR[p], dGt[j], dAt);
    }
    for (int k = 0; k < 9; ++k) dRotmats[9 * j + k] += dAR[k];
    for (int c = 0; c < 3; ++c) {
      dJ0[j][c] += dAt[c];
      if (p >= 0) dJ0[p][c] -= dAt[c];
    }
  }

  // J0 = regressor * shaped
  for (int j = 0; j < kNumJoints; ++j)
    for (int v = 0; v < V; ++v) {
      T w = static_cast<T>(spec.jointRegressor(j, v));
      if (w == T(0)) continue;
      for (int c = 0; c < 3; ++c) dShaped[static_cast<std::size_t>(v) * 3 + c] += w * dJ0[j][c];
    }

  // shaped = template + basis * beta
  for (int k = 0; k < kNumShape; ++k) {
    T acc = 0;
    for (int i = 0; i < 3 * V; ++i) acc += static_cast<T>(spec.shapeBasis(i, k)) * dShaped[static_cast<std::size_t>(i)];
    dShape[k] += acc;
  }
}

template void bodyForwardKernel<float>(const BodyModelSpec&, const float*, const float*, float*, float*);
template void bodyForwardKernel<double>(const BodyModelSpec&, const double*, const double*, double*, double*);
template void bodyForwardBackward<float>(const BodyModelSpec&, const float*, const float*, const float*, const float*,
                                         float*, float*);
template void bodyForwardBackward<double>(const BodyModelSpec&, const double*, const double*, const double*,
                                          const double*, double*, double*);

}  // namespace kernels

BodyForwardResult bodyForward(const BodyModelSpec& spec, const BodyParams& params) {
  if (!params.shape.allFinite() || !params.pose.allFinite())
    throw NumericalError("bodyForward: non-finite parameters");
  std::vector<double> rotmats(static_cast<std::size_t>(kNumJoints) * 9);
  for (int j = 0; j < kNumJoints; ++j) {
    Rotation6D r = params.pose.row(j).transpose();
    RotationMatrix R = rot6dToMatrix(r);  // throws DegenerateRotationError
    for (int i = 0; i < 3; ++i)
      for (int c = 0; c < 3; ++c) rotmats[9 * j + 3 * i + c] = R(i, c);
  }
  const int V = spec.numVertices();
  std::vector<double> verts(static_cast<std::size_t>(V) * 3), joints(kNumJoints * 3);
  kernels::bodyForwardKernel<double>(spec, rotmats.data(), params.shape.data(), verts.data(), joints.data());

  BodyForwardResult out;
  out.mesh.vertices.resize(V, 3);
  for (int v = 0; v < V; ++v) out.mesh.vertices.row(v) << verts[3 * v], verts[3 * v + 1], verts[3 * v + 2];
  out.mesh.faces = spec.faces;
  out.joints.resize(kNumJoints, 3);
  for (int j = 0; j < kNumJoints; ++j) out.joints.row(j) << joints[3 * j], joints[3 * j + 1], joints[3 * j + 2];
  return out;
}

// ---------------------------------------------------------------------------
// Toy model
// ---------------------------------------------------------------------------

namespace {

struct MeshBuilder {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::vector<int> componentStart;  // first face index of each component

  void beginComponent() { componentStart.push_back(static_cast<int>(faces.size())); }

  int addVert(const Vec3& p) {
    verts.push_back(p);
    return static_cast<int>(verts.size()) - 1;
  }

  void addFace(int a, int b, int c) { faces.push_back({a, b, c}); }

  // Flip the last component if its signed volume is negative, so every
  // component ends up outward-oriented.
  void orientLastComponent() {
    int start = componentStart.back();
    double vol = 0;
    for (std::size_t f = static_cast<std::size_t>(start); f < faces.size(); ++f) {
      const Vec3& a = verts[static_cast<std::size_t>(faces[f][0])];
      const Vec3& b = verts[static_cast<std::size_t>(faces[f][1])];
      const Vec3& c = verts[static_cast<std::size_t>(faces[f][2])];
      vol += a.dot(b.cross(c));
    }
    if (vol < 0)
      for (std::size_t f = static_cast<std::size_t>(start); f < faces.size(); ++f) std::swap(faces[f][1], faces[f][2]);
  }
};

void buildCapsule(MeshBuilder& mb, const Vec3& a, const Vec3& b, double radius, int sectors, int capRings) {
  mb.beginComponent();
  Vec3 w = (b - a).normalized();
  Vec3 ref = std::abs(w.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  Vec3 u = w.cross(ref).normalized();
  Vec3 v = w.cross(u);

  int bottomPole = mb.addVert(a - radius * w);
  std::vector<std::vector<int>> rings;
  auto addRing = [&](const Vec3& center, double r) {
    std::vector<int> ring(static_cast<std::size_t>(sectors));
    for (int s = 0; s < sectors; ++s) {
      double phi = 2.0 * M_PI * s / sectors;
      ring[static_cast<std::size_t>(s)] = mb.addVert(center + r * (std::cos(phi) * u + std::sin(phi) * v));
    }
    rings.push_back(std::move(ring));
  };
  for (int i = 1; i <= capRings; ++i) {
    double theta = -M_PI_2 + M_PI_2 * i / capRings;
    addRing(a + radius * std::sin(theta) * w, radius * std::cos(theta));
  }
  for (int i = 0; i < capRings; ++i) {
    double theta = M_PI_2 * i / capRings;
    addRing(b + radius * std::sin(theta) * w, radius * std::cos(theta));
  }
  int topPole = mb.addVert(b + radius * w);

  const auto& r0 = rings.front();
  for (int s = 0; s < sectors; ++s) mb.addFace(bottomPole, r0[static_cast<std::size_t>((s + 1) % sectors)], r0[static_cast<std::size_t>(s)]);
  for (std::size_t k = 0; k + 1 < rings.size(); ++k)
    for (int s = 0; s < sectors; ++s) {
      int s1 = (s + 1) % sectors;
      int a0 = rings[k][static_cast<std::size_t>(s)], a1 = rings[k][static_cast<std::size_t>(s1)];
      int b0 = rings[k + 1][static_cast<std::size_t>(s)], b1 = rings[k + 1][static_cast<std::size_t>(s1)];
      mb.addFace(a0, a1, b1);
      mb.addFace(a0, b1, b0);
    }
  const auto& rl = rings.back();
  for (int s = 0; s < sectors; ++s) mb.addFace(topPole, rl[static_cast<std::size_t>(s)], rl[static_cast<std::size_t>((s + 1) % sectors)]);
  mb.orientLastComponent();
}

void buildBox(MeshBuilder& mb, const Vec3& lo, const Vec3& hi, int nx, int ny, int nz) {
  mb.beginComponent();
  std::map<std::tuple<int, int, int>, int> lattice;
  auto node = [&](int i, int j, int k) {
    auto key = std::make_tuple(i, j, k);
    auto it = lattice.find(key);
    if (it != lattice.end()) return it->second;
    Vec3 p(lo.x() + (hi.x() - lo.x()) * i / nx, lo.y() + (hi.y() - lo.y()) * j / ny,
           lo.z() + (hi.z() - lo.z()) * k / nz);
    int idx = mb.addVert(p);
    lattice.emplace(key, idx);
    return idx;
  };
  // Each side uses in-plane axes (e1, e2) with e1 x e2 = outward normal.
  struct Side {
    int fixedAxis, fixedVal;
    int axis1, n1, axis2, n2;
  };
  std::array<Side, 6> sides = {{{0, nx, 1, ny, 2, nz},
                                {0, 0, 2, nz, 1, ny},
                                {1, ny, 2, nz, 0, nx},
                                {1, 0, 0, nx, 2, nz},
                                {2, nz, 0, nx, 1, ny},
                                {2, 0, 1, ny, 0, nx}}};
  for (const Side& s : sides)
    for (int i = 0; i < s.n1; ++i)
      for (int j = 0; j < s.n2; ++j) {
        auto at = [&](int di, int dj) {
          int c[3];
          c[s.fixedAxis] = s.fixedVal;
          c[s.axis1] = i + di;
          c[s.axis2] = j + dj;
          return node(c[0], c[1], c[2]);
        };
        int p00 = at(0, 0), p10 = at(1, 0), p11 = at(1, 1), p01 = at(0, 1);
        mb.addFace(p00, p10, p11);
        mb.addFace(p00, p11, p01);
      }
  mb.orientLastComponent();
}

std::array<Vec3, kNumJoints> toyRestJoints() {
  std::array<Vec3, kNumJoints> j;
  j[0] = {0.00, 0.95, 0.00};   // pelvis
  j[1] = {0.09, 0.91, 0.00};   // hips
  j[2] = {-0.09, 0.91, 0.00};
  j[3] = {0.00, 1.05, 0.00};   // spine1
  j[4] = {0.10, 0.50, 0.00};   // knees
  j[5] = {-0.10, 0.50, 0.00};
  j[6] = {0.00, 1.15, 0.00};   // spine2
  j[7] = {0.11, 0.08, 0.00};   // ankles
  j[8] = {-0.11, 0.08, 0.00};
  j[9] = {0.00, 1.25, 0.00};   // spine3
  j[10] = {0.12, 0.03, 0.10};  // feet
  j[11] = {-0.12, 0.03, 0.10};
  j[12] = {0.00, 1.40, 0.00};  // neck
  j[13] = {0.07, 1.36, 0.00};  // collars
  j[14] = {-0.07, 1.36, 0.00};
  j[15] = {0.00, 1.55, 0.00};  // head
  j[16] = {0.18, 1.36, 0.00};  // shoulders
  j[17] = {-0.18, 1.36, 0.00};
  j[18] = {0.44, 1.36, 0.00};  // elbows
  j[19] = {-0.44, 1.36, 0.00};
  j[20] = {0.68, 1.36, 0.00};  // wrists
  j[21] = {-0.68, 1.36, 0.00};
  j[22] = {0.76, 1.36, 0.00};  // hands
  j[23] = {-0.76, 1.36, 0.00};
  return j;
}

double smoothStepBelow(double y, double edge, double width) {
  return 1.0 / (1.0 + std::exp((y - edge) / width));
}

Vec3 shapeDelta(int k, const Vec3& p) {
  const Vec3 headCenter(0.0, 1.58, 0.0);
  switch (k) {
    case 0:
      return {0.0, 0.06 * (p.y() - 0.95), 0.0};  // overall height about the pelvis
    case 1:
      return {0.05 * p.x(), 0.0, 0.0};  // width
    case 2:
      return {0.0, 0.0, 0.05 * p.z()};  // depth
    case 3: {                           // torso bulk
      double m = std::exp(-std::pow((p.y() - 1.15) / 0.18, 2.0));
      return {0.04 * p.x() * m, 0.0, 0.04 * p.z() * m};
    }
    case 4: {  // leg thickness
      double m = smoothStepBelow(p.y(), 0.90, 0.05);
      double side = p.x() >= 0 ? 0.10 : -0.10;
      return {0.04 * (p.x() - side) * m, 0.0, 0.04 * p.z() * m};
    }
    case 5: {  // arm length
      double excess = p.x() - std::clamp(p.x(), -0.20, 0.20);
      return {0.06 * excess, 0.0, 0.0};
    }
    case 6: {  // leg length
      double below = std::min(p.y() - 0.95, 0.0);
      return {0.0, 0.06 * below, 0.0};
    }
    case 7: {  // head size
      Vec3 d = p - headCenter;
      double m = std::exp(-std::pow(d.norm() / 0.20, 2.0));
      return 0.05 * m * d;
    }
    case 8: {  // shoulder slope
      double m = 1.0 - smoothStepBelow(p.y(), 1.25, 0.05);
      return {0.0, -0.03 * std::abs(p.x()) * m, 0.0};
    }
    case 9: {  // hip width
      double m = std::exp(-std::pow((p.y() - 0.93) / 0.10, 2.0));
      return {0.05 * p.x() * m, 0.0, 0.0};
    }
    default:
      return Vec3::Zero();
  }
}

}  // namespace

BodyModelSpec makeToyModel(int resolution) {
  if (resolution < 1) throw Error("makeToyModel: resolution must be >= 1");
  const auto joints = toyRestJoints();
  const int sectors = 6 + 2 * resolution;
  const int capRings = 1 + resolution;

  MeshBuilder mb;
  struct Bone {
    int parent, child;
    double radius;
  };
  const std::vector<Bone> bones = {
      {1, 4, 0.065}, {2, 5, 0.065},   // upper legs
      {4, 7, 0.050}, {5, 8, 0.050},   // lower legs
      {7, 10, 0.040}, {8, 11, 0.040}, // feet
      {12, 15, 0.055},                // neck
      {13, 16, 0.050}, {14, 17, 0.050},
      {16, 18, 0.045}, {17, 19, 0.045},
      {18, 20, 0.040}, {19, 21, 0.040},
      {20, 22, 0.035}, {21, 23, 0.035}};

  std::vector<int> boneOfVert;  // skinning joint per vertex, filled as we build
  auto markVerts = [&](int joint) {
    while (boneOfVert.size() < mb.verts.size()) boneOfVert.push_back(joint);
  };

  for (const Bone& b : bones) {
    buildCapsule(mb, joints[static_cast<std::size_t>(b.parent)], joints[static_cast<std::size_t>(b.child)], b.radius,
                 sectors, capRings);
    markVerts(b.parent);
  }

  // Torso box spanning pelvis..neck; verts bind to the nearest spine joint.
  buildBox(mb, Vec3(-0.17, 0.90, -0.10), Vec3(0.17, 1.42, 0.10), 2 * resolution, 4 * resolution, 2 * resolution);
  {
    const std::array<int, 5> spine = {0, 3, 6, 9, 12};
    while (boneOfVert.size() < mb.verts.size()) {
      const Vec3& p = mb.verts[boneOfVert.size()];
      int best = spine[0];
      double bestD = std::abs(p.y() - joints[static_cast<std::size_t>(spine[0])].y());
      for (int s : spine) {
        double d = std::abs(p.y() - joints[static_cast<std::size_t>(s)].y());
        if (d < bestD) {
          bestD = d;
          best = s;
        }
      }
      boneOfVert.push_back(best);
    }
  }

  buildBox(mb, Vec3(-0.10, 1.46, -0.12), Vec3(0.10, 1.70, 0.12), 2 * resolution, 2 * resolution, 2 * resolution);
  markVerts(15);

  const int V = static_cast<int>(mb.verts.size());
  BodyModelSpec spec;
  spec.templateVertices.resize(V, 3);
  for (int v = 0; v < V; ++v) spec.templateVertices.row(v) = mb.verts[static_cast<std::size_t>(v)].transpose();
  spec.faces.resize(static_cast<Eigen::Index>(mb.faces.size()), 3);
  for (std::size_t f = 0; f < mb.faces.size(); ++f)
    spec.faces.row(static_cast<Eigen::Index>(f)) << mb.faces[f][0], mb.faces[f][1], mb.faces[f][2];

  spec.skinningWeights = Eigen::MatrixXd::Zero(V, kNumJoints);
  for (int v = 0; v < V; ++v) spec.skinningWeights(v, boneOfVert[static_cast<std::size_t>(v)]) = 1.0;

  // Joint regressor: inverse-distance weights over the nearest template verts.
  spec.jointRegressor = Eigen::MatrixXd::Zero(kNumJoints, V);
  const int kNearest = 10;
  for (int j = 0; j < kNumJoints; ++j) {
    std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(V));
    for (int v = 0; v < V; ++v)
      dist[static_cast<std::size_t>(v)] = {(mb.verts[static_cast<std::size_t>(v)] - joints[static_cast<std::size_t>(j)]).norm(), v};
    std::partial_sort(dist.begin(), dist.begin() + kNearest, dist.end());
    double total = 0;
    for (int k = 0; k < kNearest; ++k) total += 1.0 / (dist[static_cast<std::size_t>(k)].first + 1e-3);
    for (int k = 0; k < kNearest; ++k)
      spec.jointRegressor(j, dist[static_cast<std::size_t>(k)].second) =
          (1.0 / (dist[static_cast<std::size_t>(k)].first + 1e-3)) / total;
  }

  spec.shapeBasis.resize(3 * V, kNumShape);
  for (int v = 0; v < V; ++v)
    for (int k = 0; k < kNumShape; ++k) {
      Vec3 d = shapeDelta(k, mb.verts[static_cast<std::size_t>(v)]);
      spec.shapeBasis(3 * v + 0, k) = d.x();
      spec.shapeBasis(3 * v + 1, k) = d.y();
      spec.shapeBasis(3 * v + 2, k) = d.z();
    }

  spec.parents = kParents;
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Archive I/O
// ---------------------------------------------------------------------------

BodyModelSpec loadModel(const std::string& path) {
  io::ArrayArchive ar = io::ArrayArchive::load(path);
  BodyModelSpec spec;

  auto tmplShape = ar.shapeOf("template");
  if (tmplShape.size() != 2 || tmplShape[1] != 3) throw SchemaError("body model: field 'template' must be V x 3");
  const int V = tmplShape[0];
  auto tmpl = ar.getF32("template", {V, 3});
  spec.templateVertices.resize(V, 3);
  for (int v = 0; v < V; ++v)
    for (int c = 0; c < 3; ++c) spec.templateVertices(v, c) = tmpl[static_cast<std::size_t>(v) * 3 + c];

  auto faceShape = ar.shapeOf("faces");
  if (faceShape.size() != 2 || faceShape[1] != 3) throw SchemaError("body model: field 'faces' must be F x 3");
  auto faces = ar.getI32("faces", faceShape);
  spec.faces.resize(faceShape[0], 3);
  for (int f = 0; f < faceShape[0]; ++f)
    for (int c = 0; c < 3; ++c) spec.faces(f, c) = faces[static_cast<std::size_t>(f) * 3 + c];

  auto basis = ar.getF32("shape_basis", {V, 3, kNumShape});
  spec.shapeBasis.resize(3 * V, kNumShape);
  for (int i = 0; i < 3 * V; ++i)
    for (int k = 0; k < kNumShape; ++k)
      spec.shapeBasis(i, k) = basis[static_cast<std::size_t>(i) * kNumShape + k];

  auto reg = ar.getF32("joint_regressor", {kNumJoints, V});
  spec.jointRegressor.resize(kNumJoints, V);
  for (int j = 0; j < kNumJoints; ++j)
    for (int v = 0; v < V; ++v) spec.jointRegressor(j, v) = reg[static_cast<std::size_t>(j) * V + v];

  auto parents = ar.getI32("parents", {kNumJoints});
  for (int j = 0; j < kNumJoints; ++j) spec.parents[j] = parents[static_cast<std::size_t>(j)];

  auto skin = ar.getF32("skinning_weights", {V, kNumJoints});
  spec.skinningWeights.resize(V, kNumJoints);
  for (int v = 0; v < V; ++v)
    for (int j = 0; j < kNumJoints; ++j) spec.skinningWeights(v, j) = skin[static_cast<std::size_t>(v) * kNumJoints + j];

  // Re-normalize rows to absorb float32 quantization, then validate.
  for (int j = 0; j < kNumJoints; ++j) spec.jointRegressor.row(j) /= spec.jointRegressor.row(j).sum();
  for (int v = 0; v < V; ++v) spec.skinningWeights.row(v) /= spec.skinningWeights.row(v).sum();
  spec.validate();
  return spec;
}

void saveModel(const std::string& path, const BodyModelSpec& spec) {
  const int V = spec.numVertices();
  io::ArrayArchive ar;
  std::vector<float> tmpl(static_cast<std::size_t>(V) * 3);
  for (int v = 0; v < V; ++v)
    for (int c = 0; c < 3; ++c) tmpl[static_cast<std::size_t>(v) * 3 + c] = static_cast<float>(spec.templateVertices(v, c));
  ar.putF32("template", tmpl.data(), {V, 3});

  std::vector<std::int32_t> faces(static_cast<std::size_t>(spec.numFaces()) * 3);
  for (int f = 0; f < spec.numFaces(); ++f)
    for (int c = 0; c < 3; ++c) faces[static_cast<std::size_t>(f) * 3 + c] = spec.faces(f, c);
  ar.putI32("faces", faces.data(), {spec.numFaces(), 3});

  std::vector<float> basis(static_cast<std::size_t>(V) * 3 * kNumShape);
  for (int i = 0; i < 3 * V; ++i)
    for (int k = 0; k < kNumShape; ++k)
      basis[static_cast<std::size_t>(i) * kNumShape + k] = static_cast<float>(spec.shapeBasis(i, k));
  ar.putF32("shape_basis", basis.data(), {V, 3, kNumShape});

  std::vector<float> reg(static_cast<std::size_t>(kNumJoints) * V);
  for (int j = 0; j < kNumJoints; ++j)
    for (int v = 0; v < V; ++v) reg[static_cast<std::size_t>(j) * V + v] = static_cast<float>(spec.jointRegressor(j, v));
  ar.putF32("joint_regressor", reg.data(), {kNumJoints, V});

  std::vector<std::int32_t> parents(kNumJoints);
  for (int j = 0; j < kNumJoints; ++j) parents[static_cast<std::size_t>(j)] = spec.parents[j];
  ar.putI32("parents", parents.data(), {kNumJoints});

  std::vector<float> skin(static_cast<std::size_t>(V) * kNumJoints);
  for (int v = 0; v < V; ++v)
    for (int j = 0; j < kNumJoints; ++j) skin[static_cast<std::size_t>(v) * kNumJoints + j] = static_cast<float>(spec.skinningWeights(v, j));
  ar.putF32("skinning_weights", skin.data(), {V, kNumJoints});

  ar.save(path);
}

}  // namespace cmr
