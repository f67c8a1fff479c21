#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cmr/body_model.hpp"
#include "cmr/context.hpp"
#include "cmr/nn.hpp"

namespace cmr {

enum class FusionMode { kNone, kEarly, kLate, kConorm };
enum class ContextMode { kLocalGlobal, kLocal, kKeypoints17 };

FusionMode fusionModeFromString(const std::string& s);
std::string toString(FusionMode m);
ContextMode contextModeFromString(const std::string& s);
std::string toString(ContextMode m);

inline int contextChannels(ContextMode m) {
  switch (m) {
    case ContextMode::kLocal:
      return 1;
    case ContextMode::kLocalGlobal:
      return 2;
    case ContextMode::kKeypoints17:
      return kNumKeypoints17;
  }
  return 2;
}

struct ConditioningConfig {
  FusionMode fusion = FusionMode::kConorm;
  std::vector<int> insertions = {1, 2, 3, 4};  // stages followed by a CoNorm block
  int latentDim = 128;                          // K
  ContextMode context = ContextMode::kLocalGlobal;
  std::vector<int> widths = {32, 64, 128, 256};
  std::vector<int> strides = {1, 2, 2, 2};
  int inputSize = 224;
  int headHidden = 256;
  int headIterations = 3;
  double meanCameraScale = 0.9;

  void validate() const {
    if (widths.size() != 4 || strides.size() != 4) throw ConfigError("conditioning: need 4 stage widths/strides");
    if (latentDim < 1) throw ConfigError("conditioning: latent dim must be positive");
    if (inputSize % 16 != 0) throw ConfigError("conditioning: input size must be divisible by 16");
    for (int d : insertions)
      if (d < 1 || d > 4) throw ConfigError("conditioning: insertion depths must be in 1..4");
  }
};

// Learned spatial affine modulation of a feature map driven by the context.
// Phi_latent: two 3x3 convolutions with a pointwise nonlinearity between;
// Phi_scale / Phi_bias: zero-initialized 1x1 heads, so a fresh block applies
// sigma = 1, beta = 0 and leaves features bit-exactly unchanged.
template <typename T>
struct CoNormBlock {
  nn::Conv2d<T> latent1, latent2;
  nn::Conv2d<T> scaleHead, biasHead;
  int targetChannels = 0;
  int latentDim = 0;

  void init(const std::string& name, int ctxChannels, int K, int D, const Rng& initRoot) {
    targetChannels = D;
    latentDim = K;
    int hidden = std::max(8, K / 8);
    latent1.init(name + ".latent1", hidden, ctxChannels, 3, 1, 1, initRoot);
    latent2.init(name + ".latent2", K, hidden, 3, 1, 1, initRoot);
    scaleHead.init(name + ".scale", D, K, 1, 1, 0, initRoot, /*zeroInit=*/true);
    biasHead.init(name + ".bias", D, K, 1, 1, 0, initRoot, /*zeroInit=*/true);
  }

  // X: [D,H',W'], ctx: [C,H,W] at any resolution (bilinearly downsampled).
  ad::Var<T> apply(nn::Graph<T>& g, ad::Var<T> x, ad::Var<T> ctx) {
    const auto& xs = x.val().shape();
    if (xs[0] != targetChannels)
      throw ConfigError("CoNormBlock: feature has " + std::to_string(xs[0]) + " channels, block expects " +
                        std::to_string(targetChannels));
    auto c = ad::resizeBilinear(ctx, xs[1], xs[2]);
    auto lam = latent2(g, ad::relu(latent1(g, c)));
    auto sigma = ad::addConst(scaleHead(g, lam), T(1));
    auto beta = biasHead(g, lam);
    return ad::add(ad::mul(sigma, x), beta);
  }

  void collectParams(std::vector<nn::Param<T>*>& out) {
    latent1.collectParams(out);
    latent2.collectParams(out);
    scaleHead.collectParams(out);
    biasHead.collectParams(out);
  }
};

template <typename T>
struct ResidualBlock {
  nn::Conv2d<T> conv1, conv2, proj;
  bool hasProj = false;

  void init(const std::string& name, int inCh, int outCh, int stride, const Rng& initRoot) {
    conv1.init(name + ".conv1", outCh, inCh, 3, stride, 1, initRoot);
    conv2.init(name + ".conv2", outCh, outCh, 3, 1, 1, initRoot);
    hasProj = stride != 1 || inCh != outCh;
    if (hasProj) proj.init(name + ".proj", outCh, inCh, 1, stride, 0, initRoot);
  }

  ad::Var<T> forward(nn::Graph<T>& g, ad::Var<T> x) {
    auto y = conv2(g, ad::relu(conv1(g, x)));
    auto sc = hasProj ? proj(g, x) : x;
    return ad::relu(ad::add(y, sc));
  }

  void collectParams(std::vector<nn::Param<T>*>& out) {
    conv1.collectParams(out);
    conv2.collectParams(out);
    if (hasProj) proj.collectParams(out);
  }
};

// Four-stage residual backbone with a configurable conditioning pathway and
// an iterative-refinement parameter head starting from fixed neutral means.
template <typename T>
struct ConditionedRegressor {
  ConditioningConfig cfg;
  nn::Conv2d<T> stem;
  std::array<ResidualBlock<T>, 4> stages;
  std::vector<CoNormBlock<T>> conorm;  // parallel to cfg.insertions
  nn::Linear<T> fc1, fc2;
  Tensor<T> meanParams;  // raw head state: camera scale slot holds 0
  T camBias = T(0);      // softplus(raw + camBias) at raw=0 gives meanCameraScale

  void init(const ConditioningConfig& c, const Rng& initRoot) {
    cfg = c;
    cfg.validate();
    const int ctxCh = contextChannels(cfg.context);
    const int stemIn = cfg.fusion == FusionMode::kEarly ? 3 + ctxCh : 3;
    stem.init("regressor.stem", cfg.widths[0], stemIn, 3, 2, 1, initRoot);
    int ch = cfg.widths[0];
    for (int d = 0; d < 4; ++d) {
      int in = ch;
      if (cfg.fusion == FusionMode::kLate && d == 3) in += ctxCh;
      stages[static_cast<std::size_t>(d)].init("regressor.stage" + std::to_string(d + 1), in,
                                               cfg.widths[static_cast<std::size_t>(d)],
                                               cfg.strides[static_cast<std::size_t>(d)], initRoot);
      ch = cfg.widths[static_cast<std::size_t>(d)];
    }
    if (cfg.fusion == FusionMode::kConorm) {
      conorm.resize(cfg.insertions.size());
      for (std::size_t i = 0; i < cfg.insertions.size(); ++i)
        conorm[i].init("regressor.conorm" + std::to_string(cfg.insertions[i]), ctxCh, cfg.latentDim,
                       cfg.widths[static_cast<std::size_t>(cfg.insertions[i] - 1)], initRoot);
    }
    fc1.init("regressor.head.fc1", cfg.headHidden, cfg.widths[3] + BodyParams::kDim, initRoot);
    fc2.init("regressor.head.fc2", BodyParams::kDim, cfg.headHidden, initRoot, /*zeroInit=*/true);

    Eigen::VectorXd mean = BodyParams::neutral().toVector();
    meanParams = Tensor<T>({BodyParams::kDim});
    for (int i = 0; i < BodyParams::kDim; ++i) meanParams[i] = static_cast<T>(mean[i]);
    meanParams[BodyParams::kDim - 3] = T(0);  // raw camera-scale slot
    camBias = static_cast<T>(std::log(std::exp(cfg.meanCameraScale) - 1.0));
  }

  struct ForwardResult {
    ad::Var<T> pose6d;  // [24,6]
    ad::Var<T> shape;   // [10]
    ad::Var<T> cam;     // [3], scale already positive
    std::vector<ad::Var<T>> preConorm;   // stage outputs before conditioning
    std::vector<ad::Var<T>> postConorm;  // after conditioning (same depth order)
  };

  // image: [3,S,S] in [0,1]; ctx: [C,S,S] (ignored when fusion = none).
  ForwardResult forward(nn::Graph<T>& g, const Tensor<T>& image, const Tensor<T>& ctx) {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg.inputSize || image.dim(2) != cfg.inputSize)
      throw ConfigError("regressor: image must be 3x" + std::to_string(cfg.inputSize) + "x" +
                        std::to_string(cfg.inputSize));
    const int ctxCh = contextChannels(cfg.context);
    if (cfg.fusion != FusionMode::kNone && (ctx.rank() != 3 || ctx.dim(0) != ctxCh))
      throw ConfigError("regressor: context must have " + std::to_string(ctxCh) + " channels");

    ForwardResult out;
    ad::Var<T> ctxVar;
    if (cfg.fusion != FusionMode::kNone) ctxVar = g.input(ctx);

    ad::Var<T> x = g.input(image);
    if (cfg.fusion == FusionMode::kEarly)
      x = ad::concatCh(x, ad::resizeBilinear(ctxVar, cfg.inputSize, cfg.inputSize));
    x = ad::maxpool2(ad::relu(stem(g, x)));

    std::size_t conormIdx = 0;
    for (int d = 0; d < 4; ++d) {
      if (cfg.fusion == FusionMode::kLate && d == 3) {
        const auto& s = x.val().shape();
        x = ad::concatCh(x, ad::resizeBilinear(ctxVar, s[1], s[2]));
      }
      x = stages[static_cast<std::size_t>(d)].forward(g, x);
      if (cfg.fusion == FusionMode::kConorm) {
        for (std::size_t i = 0; i < cfg.insertions.size(); ++i) {
          if (cfg.insertions[i] != d + 1) continue;
          out.preConorm.push_back(x);
          x = conorm[i].apply(g, x, ctxVar);
          out.postConorm.push_back(x);
          conormIdx++;
        }
      }
    }

    auto pooled = ad::globalAvgPool(x);
    ad::Var<T> theta = g.input(meanParams);
    for (int it = 0; it < cfg.headIterations; ++it) {
      auto h = ad::relu(fc1(g, ad::concatVec(pooled, theta)));
      theta = ad::add(theta, fc2(g, h));
    }
    out.pose6d = ad::reshape(ad::sliceVec(theta, 0, kNumJoints * 6), {kNumJoints, 6});
    out.shape = ad::sliceVec(theta, kNumJoints * 6, kNumJoints * 6 + kNumShape);
    auto sRaw = ad::sliceVec(theta, BodyParams::kDim - 3, BodyParams::kDim - 2);
    auto sPos = ad::softplus(ad::addConst(sRaw, camBias));
    auto txy = ad::sliceVec(theta, BodyParams::kDim - 2, BodyParams::kDim);
    out.cam = ad::concatVec(sPos, txy);
    return out;
  }

  // Deterministic eval-mode prediction.
  BodyParams predict(const Tensor<T>& image, const Tensor<T>& ctx) {
    nn::Graph<T> g;
    g.train = false;
    ForwardResult r = forward(g, image, ctx);
    BodyParams p;
    for (int j = 0; j < kNumJoints; ++j)
      for (int c = 0; c < 6; ++c) p.pose(j, c) = static_cast<double>(r.pose6d.val().at(j, c));
    for (int k = 0; k < kNumShape; ++k) p.shape[k] = static_cast<double>(r.shape.val()[k]);
    p.camera.s = static_cast<double>(r.cam.val()[0]);
    p.camera.t = Vec2(static_cast<double>(r.cam.val()[1]), static_cast<double>(r.cam.val()[2]));
    if (!p.allFinite()) throw NumericalError("regressor: non-finite prediction");
    return p;
  }

  void collectParams(std::vector<nn::Param<T>*>& out) {
    stem.collectParams(out);
    for (auto& s : stages) s.collectParams(out);
    for (auto& c : conorm) c.collectParams(out);
    fc1.collectParams(out);
    fc2.collectParams(out);
  }
};

// Spec-level fusion helpers (value-only); the graph path uses the same
// layouts inside ConditionedRegressor::forward.
TensorF fuseEarly(const TensorF& image, const CenterMap& globalMap, const CenterMap& localMap);
TensorF fuseLate(const TensorF& feature, const TensorF& ctx);

// Plain operation wrapper matching the spec surface.
BodyParams regressorForward(ConditionedRegressor<float>& P, const TensorF& image, const InstanceContext& ctx);

}  // namespace cmr
