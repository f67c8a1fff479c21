#include "cmr/conditioning.hpp"

namespace cmr {

FusionMode fusionModeFromString(const std::string& s) {
  if (s == "none") return FusionMode::kNone;
  if (s == "early") return FusionMode::kEarly;
  if (s == "late") return FusionMode::kLate;
  if (s == "conorm") return FusionMode::kConorm;
  throw ConfigError("unknown fusion mode '" + s + "' (expected none|early|late|conorm)");
}

std::string toString(FusionMode m) {
  switch (m) {
    case FusionMode::kNone:
      return "none";
    case FusionMode::kEarly:
      return "early";
    case FusionMode::kLate:
      return "late";
    case FusionMode::kConorm:
      return "conorm";
  }
  return "conorm";
}

ContextMode contextModeFromString(const std::string& s) {
  if (s == "local") return ContextMode::kLocal;
  if (s == "local_global") return ContextMode::kLocalGlobal;
  if (s == "keypoints17") return ContextMode::kKeypoints17;
  throw ConfigError("unknown context mode '" + s + "' (expected local|local_global|keypoints17)");
}

std::string toString(ContextMode m) {
  switch (m) {
    case ContextMode::kLocal:
      return "local";
    case ContextMode::kLocalGlobal:
      return "local_global";
    case ContextMode::kKeypoints17:
      return "keypoints17";
  }
  return "local_global";
}

TensorF fuseEarly(const TensorF& image, const CenterMap& globalMap, const CenterMap& localMap) {
  if (image.rank() != 3 || image.dim(0) != 3) throw Error("fuseEarly: image must be [3,H,W]");
  const int H = image.dim(1), W = image.dim(2);
  if (globalMap.dim(0) != H || globalMap.dim(1) != W || !globalMap.sameShape(localMap))
    throw Error("fuseEarly: map resolution mismatch");
  TensorF out({5, H, W});
  std::copy(image.data(), image.data() + image.size(), out.data());
  std::copy(globalMap.data(), globalMap.data() + globalMap.size(), out.data() + image.size());
  std::copy(localMap.data(), localMap.data() + localMap.size(), out.data() + image.size() + globalMap.size());
  return out;
}

TensorF fuseLate(const TensorF& feature, const TensorF& ctx) {
  if (feature.rank() != 3 || ctx.rank() != 3) throw Error("fuseLate: expected [C,H,W] tensors");
  ad::Tape<float> tape;
  auto c = ad::resizeBilinear(ad::constant(tape, ctx), feature.dim(1), feature.dim(2));
  auto out = ad::concatCh(ad::constant(tape, feature), c);
  return out.val();
}

BodyParams regressorForward(ConditionedRegressor<float>& P, const TensorF& image, const InstanceContext& ctx) {
  return P.predict(image, ctx);
}

}  // namespace cmr
