#include "cmr/losses.hpp"

#include <cmath>
#include <memory>

#include "cmr/log.hpp"

namespace cmr {

namespace {

template <typename T>
T softplusT(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoidT(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// Per-pixel depth-ordering terms plus (optionally) unit gradients w.r.t. the
// per-instance depth maps.
template <typename T>
struct DepthCoreResult {
  T loss = 0;
  int violations = 0;
  std::vector<Tensor<T>> dDepth;
};

template <typename T>
DepthCoreResult<T> depthLossCore(const detail::SoftRasterState<T>& st, const Tensor<std::int32_t>& labels,
                                 bool wantGrads) {
  const int H = st.height, W = st.width;
  if (labels.rank() != 2 || labels.dim(0) != H || labels.dim(1) != W)
    throw ConfigError("lossDepth: mask resolution does not match rasterizer resolution");
  DepthCoreResult<T> out;
  if (wantGrads) out.dDepth.assign(static_cast<std::size_t>(st.n), Tensor<T>({H, W}));

  struct Term {
    int y, x, i, j;
    T diff;
  };
  std::vector<Term> terms;
  const T s = st.sharpness;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int gt = labels.at(y, x);
      if (gt < 0 || gt >= st.n) continue;
      T dmin = std::numeric_limits<T>::infinity();
      for (int i = 0; i < st.n; ++i)
        if (st.coverage[static_cast<std::size_t>(i)].at(y, x) > st.coverageCut)
          dmin = std::min(dmin, st.depth[static_cast<std::size_t>(i)].at(y, x));
      if (!std::isfinite(static_cast<double>(dmin))) continue;
      int best = -1;
      T bestW = T(0);
      for (int i = 0; i < st.n; ++i) {
        T c = st.coverage[static_cast<std::size_t>(i)].at(y, x);
        if (c <= st.coverageCut) continue;
        T w = c * std::exp(-s * (st.depth[static_cast<std::size_t>(i)].at(y, x) - dmin));
        if (w > bestW) {
          bestW = w;
          best = i;
        }
      }
      if (best < 0 || best == gt) continue;
      if (st.coverage[static_cast<std::size_t>(gt)].at(y, x) <= st.coverageCut) continue;  // silhouette miss, not ordering
      T di = st.depth[static_cast<std::size_t>(gt)].at(y, x);
      T dj = st.depth[static_cast<std::size_t>(best)].at(y, x);
      terms.push_back({y, x, gt, best, di - dj});
    }

  if (terms.empty()) return out;
  T inv = T(1) / static_cast<T>(terms.size());
  for (const auto& t : terms) {
    out.loss += softplusT(t.diff) * inv;
    if (wantGrads) {
      T g = sigmoidT(t.diff) * inv;
      out.dDepth[static_cast<std::size_t>(t.i)].at(t.y, t.x) += g;
      out.dDepth[static_cast<std::size_t>(t.j)].at(t.y, t.x) -= g;
    }
  }
  out.violations = static_cast<int>(terms.size());
  return out;
}

template <typename T>
void stateFromVerts(detail::SoftRasterState<T>& st, const std::vector<const Tensor<T>*>& verts,
                    const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>& faces,
                    const WeakPerspectiveCamera& cam, const RasterConfig& cfg) {
  st.n = static_cast<int>(verts.size());
  st.height = cfg.height;
  st.width = cfg.width;
  st.sharpness = static_cast<T>(cfg.sharpness);
  st.coverageCut = static_cast<T>(cfg.coverageCut);
  st.faces = faces;
  for (const Tensor<T>* v : verts) {
    const int V = v->dim(0);
    Tensor<T> xy({V, 2});
    Tensor<T> z({V});
    for (int k = 0; k < V; ++k) {
      xy.at(k, 0) = static_cast<T>(cam.s) * v->at(k, 0) + static_cast<T>(cam.t.x());
      xy.at(k, 1) = static_cast<T>(cam.s) * v->at(k, 1) + static_cast<T>(cam.t.y());
      z[k] = v->at(k, 2);
    }
    st.xy.push_back(std::move(xy));
    st.z.push_back(std::move(z));
  }
}

}  // namespace

// --- plain API -----------------------------------------------------------------

double lossInstance(const BodyParams& pred, const InstanceTarget& target, const BodyModelSpec& spec,
                    const LossWeights& w) {
  ad::Tape<double> tape;
  ops::PredVars<double> vars;
  Tensor<double> pose({kNumJoints, 6}), shape({kNumShape}), cam({3});
  for (int j = 0; j < kNumJoints; ++j)
    for (int c = 0; c < 6; ++c) pose.at(j, c) = pred.pose(j, c);
  for (int k = 0; k < kNumShape; ++k) shape[k] = pred.shape[k];
  cam[0] = pred.camera.s;
  cam[1] = pred.camera.t.x();
  cam[2] = pred.camera.t.y();
  vars.pose6d = ad::constant(tape, std::move(pose));
  vars.shape = ad::constant(tape, std::move(shape));
  vars.cam = ad::constant(tape, std::move(cam));
  return ops::lossInstanceVar(vars, target, spec, w).loss.val()[0];
}

double lossSingle(const std::vector<BodyParams>& preds, const std::vector<InstanceTarget>& targets,
                  const BodyModelSpec& spec, const LossWeights& w) {
  if (preds.size() != targets.size() || preds.empty())
    throw Error("lossSingle: prediction/target count mismatch or empty");
  double acc = 0;
  int n = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (targets[i].keypoints2d.visibleCount() < kMinVisibleKeypoints) continue;
    acc += lossInstance(preds[i], targets[i], spec, w);
    ++n;
  }
  if (n == 0) {
    log::warn("lossSingle: no instance has >= 5 visible keypoints");
    return 0;
  }
  return acc / n;
}

double lossCollision(const std::vector<Mesh>& meshes, int resolution) {
  if (meshes.empty()) throw Error("lossCollision: need at least one mesh");
  if (meshes.size() == 1) return 0;
  std::vector<SDFGrid> grids;
  grids.reserve(meshes.size());
  for (const Mesh& m : meshes) grids.push_back(buildSdf(m, resolution));
  double acc = 0;
  for (std::size_t i = 0; i < meshes.size(); ++i)
    for (std::size_t j = 0; j < meshes.size(); ++j) {
      if (i == j) continue;
      acc += sampleSdf(grids[i], meshes[j].vertices).sum();
    }
  return acc;
}

double lossDepth(const std::vector<Mesh>& meshes, const WeakPerspectiveCamera& cam,
                 const Tensor<std::int32_t>& maskLabels, const RasterConfig& cfg) {
  if (meshes.empty()) throw Error("lossDepth: need at least one mesh");
  detail::SoftRasterState<double> st;
  std::vector<Tensor<double>> verts;
  std::vector<const Tensor<double>*> vertPtrs;
  std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*> faces;
  verts.reserve(meshes.size());
  for (const Mesh& m : meshes) {
    const int V = static_cast<int>(m.vertices.rows());
    Tensor<double> t({V, 3});
    for (int v = 0; v < V; ++v)
      for (int c = 0; c < 3; ++c) t.at(v, c) = m.vertices(v, c);
    verts.push_back(std::move(t));
    faces.push_back(&m.faces);
  }
  for (const auto& v : verts) vertPtrs.push_back(&v);
  stateFromVerts(st, vertPtrs, faces, cam, cfg);
  detail::softRasterForward(st);
  return depthLossCore(st, maskLabels, false).loss;
}

double totalLoss(double single, double collision, double depth, const LossWeights& w) {
  if (!w.valid()) throw ConfigError("totalLoss: negative loss weight");
  return w.single * single + w.collision * collision + w.depth * depth;
}

// --- autodiff builders -----------------------------------------------------------

namespace ops {

template <typename T>
InstanceLossResult<T> lossInstanceVar(const PredVars<T>& pred, const InstanceTarget& target,
                                      const BodyModelSpec& spec, const LossWeights& w) {
  if (!target.hasSupervision()) throw Error("lossInstance: target carries no supervision signal");
  ad::Tape<T>& tape = *pred.pose6d.tape;

  auto rotmats = rot6dToMatrices(pred.pose6d);
  auto body = bodyForward(spec, rotmats, pred.shape);

  ad::Var<T> loss = ad::constant(tape, Tensor<T>::scalar(T(0)));

  if (target.keypoints2d.count() > 0) {
    if (target.keypoints2d.count() != kNumJoints)
      throw ConfigError("lossInstance: expected 24-joint keypoint layout");
    int nVis = target.keypoints2d.visibleCount();
    if (nVis == 0) {
      log::warn("lossInstance: all keypoints invisible, 2D term skipped");
    } else {
      auto kp2 = projectPoints(body.joints, pred.cam);
      Tensor<T> gt({kNumJoints, 2});
      Tensor<T> mask({kNumJoints, 2});
      for (int j = 0; j < kNumJoints; ++j) {
        if (!target.keypoints2d.visible[static_cast<std::size_t>(j)]) continue;
        Vec2 n = pixelToNormalized(target.keypoints2d.positions.row(j).transpose(), target.imageWidth,
                                   target.imageHeight);
        gt.at(j, 0) = static_cast<T>(n.x());
        gt.at(j, 1) = static_cast<T>(n.y());
        mask.at(j, 0) = mask.at(j, 1) = T(1);
      }
      auto diff = ad::mulConst(ad::sub(kp2, ad::constant(tape, std::move(gt))), std::move(mask));
      loss = ad::add(loss, ad::scale(ad::l1Sum(diff), static_cast<T>(w.kp2d / nVis)));
    }
  }

  if (target.joints3d.has_value()) {
    Tensor<T> gt({kNumJoints, 3});
    for (int j = 0; j < kNumJoints; ++j)
      for (int c = 0; c < 3; ++c)
        gt.at(j, c) = static_cast<T>((*target.joints3d)(j, c) - (*target.joints3d)(kPelvis, c));
    auto centered = ad::subtractRow(body.joints, kPelvis);
    auto diff = ad::sub(centered, ad::constant(tape, std::move(gt)));
    loss = ad::add(loss, ad::scale(ad::sumSquares(diff), static_cast<T>(w.joints3d / (kNumJoints * 3))));
  }

  if (target.params.has_value()) {
    Tensor<T> gtR({kNumJoints, 3, 3});
    for (int j = 0; j < kNumJoints; ++j) {
      double R[9];
      Rotation6D r = target.params->pose.row(j).transpose();
      if (!kernels::rot6dToMatrix(r.data(), R))
        throw DegenerateRotationError("lossInstance: degenerate ground-truth pose");
      for (int k = 0; k < 9; ++k) gtR[9 * j + k] = static_cast<T>(R[k]);
    }
    auto dR = ad::sub(rotmats, ad::constant(tape, std::move(gtR)));
    loss = ad::add(loss, ad::scale(ad::sumSquares(dR), static_cast<T>(w.poseParam / (kNumJoints * 9))));

    Tensor<T> gtS({kNumShape});
    for (int k = 0; k < kNumShape; ++k) gtS[k] = static_cast<T>(target.params->shape[k]);
    auto dS = ad::sub(pred.shape, ad::constant(tape, std::move(gtS)));
    loss = ad::add(loss, ad::scale(ad::sumSquares(dS), static_cast<T>(w.shapeParam / kNumShape)));
  }

  return {loss, body.verts, body.joints};
}

template <typename T>
ad::Var<T> lossCollisionFrozen(const std::vector<ad::Var<T>>& sceneVerts, const std::vector<const SDFGrid*>& grids) {
  ad::Tape<T>& tape = *sceneVerts.front().tape;
  ad::Var<T> loss = ad::constant(tape, Tensor<T>::scalar(T(0)));
  for (std::size_t i = 0; i < sceneVerts.size(); ++i)
    for (std::size_t j = 0; j < sceneVerts.size(); ++j) {
      if (i == j) continue;
      loss = ad::add(loss, ad::sum(sampleSdf(sceneVerts[j], *grids[i])));
    }
  return loss;
}

template <typename T>
ad::Var<T> lossCollisionVar(const std::vector<ad::Var<T>>& sceneVerts,
                            const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>& faces, int resolution,
                            std::vector<SDFGrid>* gridStorage) {
  if (sceneVerts.size() != faces.size() || sceneVerts.empty()) throw Error("lossCollision: bad inputs");
  if (sceneVerts.size() == 1) return ad::constant(*sceneVerts.front().tape, Tensor<T>::scalar(T(0)));
  gridStorage->clear();
  for (std::size_t i = 0; i < sceneVerts.size(); ++i) {
    const Tensor<T>& v = sceneVerts[i].val();
    Mesh m;
    m.vertices.resize(v.dim(0), 3);
    for (int k = 0; k < v.dim(0); ++k)
      for (int c = 0; c < 3; ++c) m.vertices(k, c) = static_cast<double>(v.at(k, c));
    m.faces = *faces[i];
    gridStorage->push_back(buildSdf(m, resolution));
  }
  std::vector<const SDFGrid*> ptrs;
  for (const SDFGrid& g : *gridStorage) ptrs.push_back(&g);
  return lossCollisionFrozen(sceneVerts, ptrs);
}

template <typename T>
ad::Var<T> lossDepthVar(const std::vector<ad::Var<T>>& sceneVerts,
                        const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>& faces,
                        const Tensor<std::int32_t>& maskLabels, const RasterConfig& cfg) {
  if (sceneVerts.empty() || sceneVerts.size() != faces.size()) throw Error("lossDepth: bad inputs");
  ad::Tape<T>& tape = *sceneVerts.front().tape;

  auto state = std::make_shared<detail::SoftRasterState<T>>();
  {
    std::vector<const Tensor<T>*> vertPtrs;
    for (const auto& v : sceneVerts) vertPtrs.push_back(&v.val());
    stateFromVerts(*state, vertPtrs, faces, WeakPerspectiveCamera{}, cfg);
  }
  detail::softRasterForward(*state);
  auto core = std::make_shared<DepthCoreResult<T>>(depthLossCore(*state, maskLabels, true));

  bool rg = false;
  for (const auto& v : sceneVerts) rg = rg || v.requiresGrad();
  int id = tape.push(Tensor<T>::scalar(core->loss), rg);
  if (rg) {
    std::vector<int> parentIds;
    for (const auto& v : sceneVerts) parentIds.push_back(v.id);
    tape.setBack(id, [id, parentIds, state, core](ad::Tape<T>& tp) {
      if (core->violations == 0) return;
      T g = tp.grad(id)[0];
      std::vector<Tensor<T>> dCov, dDep;
      for (int i = 0; i < state->n; ++i) {
        dCov.push_back(Tensor<T>({state->height, state->width}));
        Tensor<T> d = core->dDepth[static_cast<std::size_t>(i)];
        for (std::int64_t k = 0; k < d.size(); ++k) d[k] *= g;
        dDep.push_back(std::move(d));
      }
      std::vector<Tensor<T>> dXy, dZ;
      detail::softRasterBackward(*state, dCov, dDep, dXy, dZ);
      for (std::size_t i = 0; i < parentIds.size(); ++i) {
        if (!tp.requiresGrad(parentIds[i])) continue;
        Tensor<T>& gv = tp.grad(parentIds[i]);
        const int V = gv.dim(0);
        for (int v = 0; v < V; ++v) {
          gv.at(v, 0) += dXy[i].at(v, 0);
          gv.at(v, 1) += dXy[i].at(v, 1);
          gv.at(v, 2) += dZ[i][v];
        }
      }
    });
  }
  return {&tape, id};
}

template InstanceLossResult<float> lossInstanceVar<float>(const PredVars<float>&, const InstanceTarget&,
                                                          const BodyModelSpec&, const LossWeights&);
template InstanceLossResult<double> lossInstanceVar<double>(const PredVars<double>&, const InstanceTarget&,
                                                            const BodyModelSpec&, const LossWeights&);
template ad::Var<float> lossCollisionFrozen<float>(const std::vector<ad::Var<float>>&,
                                                   const std::vector<const SDFGrid*>&);
template ad::Var<double> lossCollisionFrozen<double>(const std::vector<ad::Var<double>>&,
                                                     const std::vector<const SDFGrid*>&);
template ad::Var<float> lossCollisionVar<float>(const std::vector<ad::Var<float>>&,
                                                const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>&, int,
                                                std::vector<SDFGrid>*);
template ad::Var<double> lossCollisionVar<double>(const std::vector<ad::Var<double>>&,
                                                  const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>&,
                                                  int, std::vector<SDFGrid>*);
template ad::Var<float> lossDepthVar<float>(const std::vector<ad::Var<float>>&,
                                            const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>&,
                                            const Tensor<std::int32_t>&, const RasterConfig&);
template ad::Var<double> lossDepthVar<double>(const std::vector<ad::Var<double>>&,
                                              const std::vector<const Eigen::Matrix<int, Eigen::Dynamic, 3>*>&,
                                              const Tensor<std::int32_t>&, const RasterConfig&);

}  // namespace ops
}  // namespace cmr
