#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cmr/body_model.hpp"
#include "cmr/geometry.hpp"
#include "cmr/nn.hpp"
#include "cmr/tensor.hpp"

namespace cmr {

inline constexpr double kDefaultCenterSigma = 6.0;   // pixels
inline constexpr double kDefaultPeakThreshold = 0.3;
inline constexpr int kPeakWindow = 5;                // local-maximum window, pixels

// K x 2 pixel positions plus per-keypoint visibility.
struct Keypoints2D {
  PointSet2D positions;
  std::vector<std::uint8_t> visible;

  int count() const { return static_cast<int>(positions.rows()); }
  int visibleCount() const {
    int n = 0;
    for (auto v : visible) n += v ? 1 : 0;
    return n;
  }
};

// Centermaps are [H,W] tensors in [0,1]; instance contexts stack centermaps
// channel-first as [C,H,W] (channel 0 = global, channel 1 = local).
using CenterMap = TensorF;
using InstanceContext = TensorF;

// Mean of visible torso joints; falls back to the mean of all visible joints
// when the torso is fully occluded, and to nullopt when nothing is visible.
// torsoIndices defaults to the 24-joint layout's neck/shoulders/pelvis/hips.
std::optional<Vec2> computeBodyCenter(const Keypoints2D& kp,
                                      std::span<const int> torsoIndices = std::span<const int>(
                                          kTorsoJoints.data(), kTorsoJoints.size()));

// Unnormalized Gaussians (peak 1.0 at each continuous center), composed by
// pixelwise maximum. Centers outside the image contribute their in-image tail.
CenterMap renderCentermap(const std::vector<Vec2>& centers, int height, int width,
                          double sigma = kDefaultCenterSigma);

struct CenterDetection {
  Vec2 center;         // pixel coordinates of the detected peak
  float peak = 0.f;
  CenterMap localMap;  // single rendered Gaussian at the detection
};

// Strict local maxima above `threshold` within a kPeakWindow window; plateau
// ties break by row-major order. Detections are sorted by descending peak.
std::vector<CenterDetection> extractLocalCentermaps(const CenterMap& globalMap, double threshold,
                                                    double sigma = kDefaultCenterSigma);

// Channel-wise stack: [global; local].
InstanceContext makeInstanceContext(const CenterMap& globalMap, const CenterMap& localMap);

// One Gaussian per visible keypoint in its own channel (17-keypoint layout).
TensorF renderKeypointHeatmaps(const Keypoints2D& kp17, int height, int width, double sigma = kDefaultCenterSigma);

// Mean squared error over pixels.
double lossContext(const CenterMap& pred, const CenterMap& gt);

// Small fully-convolutional heatmap network: three stride-2 encoder convs,
// three nearest-upsample decoder convs with skip connections, sigmoid output.
template <typename T>
struct ContextEstimator {
  nn::Conv2d<T> enc1, enc2, enc3;
  nn::Conv2d<T> dec1, dec2, dec3;
  int base = 8;

  void init(const Rng& initRoot, int baseCh = 8) {
    base = baseCh;
    enc1.init("context.enc1", base, 3, 3, 2, 1, initRoot);
    enc2.init("context.enc2", base * 2, base, 3, 2, 1, initRoot);
    enc3.init("context.enc3", base * 4, base * 2, 3, 2, 1, initRoot);
    dec1.init("context.dec1", base * 2, base * 4 + base * 2, 3, 1, 1, initRoot);
    dec2.init("context.dec2", base, base * 2 + base, 3, 1, 1, initRoot);
    dec3.init("context.dec3", 1, base, 3, 1, 1, initRoot);
  }

  // image: [3,H,W] in [0,1] -> [1,H,W] in [0,1].
  ad::Var<T> forward(nn::Graph<T>& g, ad::Var<T> image) {
    auto e1 = ad::relu(enc1(g, image));
    auto e2 = ad::relu(enc2(g, e1));
    auto e3 = ad::relu(enc3(g, e2));
    auto d1 = ad::relu(dec1(g, ad::concatCh(ad::upsampleNearest2(e3), e2)));
    auto d2 = ad::relu(dec2(g, ad::concatCh(ad::upsampleNearest2(d1), e1)));
    return ad::sigmoid(dec3(g, ad::upsampleNearest2(d2)));
  }

  void collectParams(std::vector<nn::Param<T>*>& out) {
    enc1.collectParams(out);
    enc2.collectParams(out);
    enc3.collectParams(out);
    dec1.collectParams(out);
    dec2.collectParams(out);
    dec3.collectParams(out);
  }
};

// Inference wrapper: predicted global centermap for an [3,H,W] image.
CenterMap estimateContext(ContextEstimator<float>& estimator, const TensorF& image);

}  // namespace cmr
